"""Image buffers, colour conversion, Gaussian blur and pyramids.

Images are plain ``numpy`` float64 arrays with intensities in [0, 1], shaped
``(H, W)`` for grayscale or ``(H, W, C)`` for colour.  Every function here is
pure and returns a new array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from foveatex.errors import InvalidArgument

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
PYRAMID_SIGMA = 1.0
MIN_PYRAMID_SIZE = 8


def as_image(img) -> np.ndarray:
    """Validate ``img`` and return it as a float64 array (no copy if possible)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise InvalidArgument(f"image must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise InvalidArgument(f"image must have 1 or 3 channels, got {arr.shape[2]}")
    if arr.size == 0:
        raise InvalidArgument("image is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("image contains non-finite values")
    return arr


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def to_grayscale(img) -> np.ndarray:
    """BT.601 luminance of a 3-channel image."""
    arr = as_image(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgument("to_grayscale expects a 3-channel image")
    return arr @ LUMA_WEIGHTS


def ensure_gray(img) -> np.ndarray:
    """Grayscale view of ``img``; colour images are converted, 1-channel squeezed."""
    arr = as_image(img)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    return to_grayscale(arr)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalised 1-D Gaussian taps with radius ``ceil(3 sigma)``."""
    if not math.isfinite(sigma) or sigma < 0:
        raise InvalidArgument(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    return taps / taps.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur (rows, then columns) with edge replication."""
    arr = as_image(img)
    taps = gaussian_kernel(sigma)
    if taps.size == 1:
        return arr.copy()
    out = ndimage.correlate1d(arr, taps, axis=1, mode="nearest")
    return ndimage.correlate1d(out, taps, axis=0, mode="nearest")


def quantize(img) -> np.ndarray:
    """8-bit quantisation with round-half-up: ``floor(255 clamp(v) + 0.5)``."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def dequantize(img8) -> np.ndarray:
    return np.asarray(img8, dtype=np.float64) / 255.0


def downsample(img: np.ndarray) -> np.ndarray:
    """Blur with sigma 1 and keep every second pixel (floor halving)."""
    blurred = gaussian_blur(img, PYRAMID_SIGMA)
    h, w = img.shape[:2]
    return blurred[0 : 2 * (h // 2) : 2, 0 : 2 * (w // 2) : 2]


def upsample(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixel-replicate to ``shape`` (edge padded for odd sizes), then blur."""
    up = np.repeat(np.repeat(img, 2, axis=0), 2, axis=1)
    h, w = shape
    pad_h, pad_w = max(0, h - up.shape[0]), max(0, w - up.shape[1])
    if pad_h or pad_w:
        pad = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (up.ndim - 2)
        up = np.pad(up, pad, mode="edge")
    return gaussian_blur(up[:h, :w], PYRAMID_SIGMA)


@dataclass(frozen=True)
class Pyramid:
    levels: list
    kind: Literal["gaussian", "laplacian"]

    def reconstruct(self) -> np.ndarray:
        if self.kind != "laplacian":
            return self.levels[0].copy()
        out = self.levels[-1]
        for band in reversed(self.levels[:-1]):
            out = band + upsample(out, band.shape[:2])
        return out


def max_pyramid_levels(shape) -> int:
    n = min(shape[0], shape[1])
    levels = 1
    while n / 2 ** levels >= MIN_PYRAMID_SIZE:
        levels += 1
    return levels


def build_pyramid(img, levels: int, kind: str = "gaussian") -> Pyramid:
    """Gaussian or Laplacian pyramid with ``levels`` levels.

    The Laplacian pyramid stores ``levels - 1`` band-pass images followed by
    the coarsest Gaussian level, so ``reconstruct`` inverts it exactly up to
    rounding.
    """
    arr = as_image(img)
    if kind not in ("gaussian", "laplacian"):
        raise InvalidArgument(f"unknown pyramid kind {kind!r}")
    if levels < 1:
        raise InvalidArgument("levels must be >= 1")
    if levels > max_pyramid_levels(arr.shape):
        raise InvalidArgument(
            f"{levels} levels need min side >= {MIN_PYRAMID_SIZE * 2 ** (levels - 1)}, "
            f"image is {arr.shape[1]}x{arr.shape[0]}"
        )
    gauss = [arr]
    for _ in range(levels - 1):
        gauss.append(downsample(gauss[-1]))
    if kind == "gaussian":
        return Pyramid(gauss, "gaussian")
    bands = [g - upsample(g_next, g.shape[:2]) for g, g_next in zip(gauss, gauss[1:])]
    bands.append(gauss[-1])
    return Pyramid(bands, "laplacian")
