"""Stage-1 foveated image transforms, rate-distortion matching and stimulus tools."""

from foveatex.errors import InvalidArgument, UnreachableRate, PredictionParseError

__version__ = "0.1.0"

__all__ = ["InvalidArgument", "UnreachableRate", "PredictionParseError", "__version__"]
