class InvalidArgument(ValueError):
    pass


class UnreachableRate(RuntimeError):
    """Raised when a target SSIM rate cannot be bracketed by the sigma search range.

    ``ring`` is set for per-ring searches.
    """

    def __init__(self, message, ring=None):
        super().__init__(message)
        self.ring = ring


class PredictionParseError(ValueError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line
