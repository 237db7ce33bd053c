"""Full-reference image quality metrics and corpus aggregation.

SSIM, MS-SSIM, mutual information and NLPD operate on luminance; colour
inputs are converted with BT.601 weights first. MSE is computed on all
channels at the 0-255 scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from foveatex.errors import InvalidArgument
from foveatex.image import as_image, build_pyramid, ensure_gray, quantize

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
NLPD_LEVELS = 6
NLPD_CONSTANT = 0.17

# column order of the comparison table
TABLE_METRICS = ("ssim", "ms_ssim", "mse", "mutual_information", "nlpd")


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise InvalidArgument("K1 and K2 must be positive")
        if self.window_size % 2 != 1:
            raise InvalidArgument("window_size must be odd")

    def window(self) -> np.ndarray:
        x = np.arange(self.window_size) - self.window_size // 2
        taps = np.exp(-0.5 * (x / self.window_sigma) ** 2)
        return taps / taps.sum()


DEFAULT_SSIM = SsimParams()


def _same_size(a, b, gray=True):
    if gray:
        a, b = ensure_gray(a), ensure_gray(b)
    else:
        a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _filter_valid(x, taps):
    r = taps.size // 2
    out = ndimage.correlate1d(x, taps, axis=1, mode="nearest")
    out = ndimage.correlate1d(out, taps, axis=0, mode="nearest")
    return out[r : x.shape[0] - r, r : x.shape[1] - r]


def _ssim_components(a, b, params: SsimParams):
    """Luminance and contrast-structure maps over the valid window positions."""
    taps = params.window()
    if min(a.shape) < taps.size:
        raise InvalidArgument(f"image smaller than the {taps.size}x{taps.size} SSIM window")
    c1 = (params.k1 * params.dynamic_range) ** 2
    c2 = (params.k2 * params.dynamic_range) ** 2
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim_map(a, b, params: SsimParams = DEFAULT_SSIM) -> np.ndarray:
    """Per-window SSIM map, shape ``(H - 10, W - 10)`` for the default window."""
    a, b = _same_size(a, b)
    lum, cs = _ssim_components(a, b, params)
    return lum * cs


def crop_to_valid(weights, params: SsimParams = DEFAULT_SSIM) -> np.ndarray:
    r = params.window_size // 2
    w = np.asarray(weights, dtype=np.float64)
    return w[r : w.shape[0] - r, r : w.shape[1] - r]


def weighted_mean(smap, weights) -> float:
    total = weights.sum()
    if total <= 0:
        raise InvalidArgument("SSIM weights have no mass inside the valid window region")
    return float((smap * weights).sum() / total)


def ssim(a, b, params: SsimParams = DEFAULT_SSIM, weights=None) -> float:
    """Mean SSIM; with ``weights`` (full-frame map) the map is averaged with those weights."""
    smap = ssim_map(a, b, params)
    if weights is None:
        return float(smap.mean())
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != ensure_gray(a).shape:
        raise InvalidArgument(f"weight map shape {w.shape} does not match image")
    return weighted_mean(smap, crop_to_valid(w, params))


def _half(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, params: SsimParams = DEFAULT_SSIM, weights=MS_SSIM_WEIGHTS) -> float:
    """Five-scale MS-SSIM. Contrast-structure terms are clipped at 0 before exponentiation."""
    a, b = _same_size(a, b)
    n = len(weights)
    need = params.window_size * 2 ** (n - 1)
    if min(a.shape) < need:
        raise InvalidArgument(f"MS-SSIM needs min side >= {need}, got {min(a.shape)}")
    score = 1.0
    for j, wj in enumerate(weights):
        lum, cs = _ssim_components(a, b, params)
        if j < n - 1:
            score *= max(float(cs.mean()), 0.0) ** wj
            a, b = _half(a), _half(b)
        else:
            score *= max(float((lum * cs).mean()), 0.0) ** wj
    return score


def mse(a, b) -> float:
    a, b = _same_size(a, b, gray=False)
    d = 255.0 * a - 255.0 * b
    return float(np.mean(d * d))


def _entropy_from_counts(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def entropy(img) -> float:
    """Shannon entropy (bits) of the 8-bit quantised luminance."""
    q = quantize(ensure_gray(img)).ravel()
    return _entropy_from_counts(np.bincount(q, minlength=256))


def mutual_information(a, b) -> float:
    """Mutual information in bits from the 256x256 joint histogram of 8-bit luminance."""
    a, b = _same_size(a, b)
    qa = quantize(a).ravel().astype(np.int64)
    qb = quantize(b).ravel().astype(np.int64)
    joint = np.bincount(qa * 256 + qb, minlength=256 * 256).reshape(256, 256)
    h_a = _entropy_from_counts(joint.sum(axis=1))
    h_b = _entropy_from_counts(joint.sum(axis=0))
    h_ab = _entropy_from_counts(joint.ravel())
    return h_a + h_b - h_ab


def _normalize_band(band, c):
    local = ndimage.uniform_filter(np.abs(band), size=3, mode="nearest")
    return band / (c + local)


def nlpd(a, b, levels: int = NLPD_LEVELS, c: float = NLPD_CONSTANT) -> float:
    """Normalised Laplacian pyramid distance: mean over levels of the RMS difference."""
    a, b = _same_size(a, b)
    pa = build_pyramid(a, levels, "laplacian").levels
    pb = build_pyramid(b, levels, "laplacian").levels
    dists = []
    for ba, bb in zip(pa, pb):
        d = _normalize_band(ba, c) - _normalize_band(bb, c)
        dists.append(np.sqrt(np.mean(d * d)))
    return float(np.mean(dists))


METRICS = {
    "ssim": ssim,
    "ms_ssim": ms_ssim,
    "mse": mse,
    "mutual_information": mutual_information,
    "nlpd": nlpd,
}


def compute(a, b, metrics=TABLE_METRICS) -> dict[str, float]:
    out = {}
    for name in metrics:
        if name not in METRICS:
            raise InvalidArgument(f"unknown metric {name!r}; choose from {sorted(METRICS)}")
        out[name] = METRICS[name](a, b)
    return out


@dataclass(frozen=True)
class MetricReport:
    metric: str
    scores: list = field(repr=False)
    mean: float
    std: float
    n: int


def aggregate(scores, metric: str = "") -> MetricReport:
    """Mean and population standard deviation of per-image scores."""
    values = [float(s) for s in scores]
    if not values:
        raise InvalidArgument("cannot aggregate an empty score list")
    arr = np.asarray(values)
    return MetricReport(metric, values, float(arr.mean()), float(arr.std()), len(values))
