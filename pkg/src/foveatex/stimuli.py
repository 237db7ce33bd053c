"""Experimental stimuli built from stage-1 outputs, and crossover analysis.

Covers low/high-pass frequency stimuli, four occlusion layouts, fovea/periphery
cue-conflict composites, and accuracy curves from externally produced
classifier predictions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from foveatex.errors import InvalidArgument, PredictionParseError
from foveatex.image import as_image, ensure_gray, gaussian_blur

INF = math.inf
LOWPASS_SIGMAS = (0, 1, 3, 5, 7, 10, 15, 40)
HIGHPASS_SIGMAS = (INF, 3, 1.5, 1, 0.7, 0.55, 0.45, 0.4)
OCCLUSION_KINDS = ("left2right", "top2bottom", "scotoma", "glaucoma")
DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(11))
PREDICTION_HEADER = ("path", "ratio", "inner_class", "outer_class", "predicted_class")


@dataclass(frozen=True)
class FrequencySpec:
    kind: str
    sigma: float
    color_mode: str = "color"
    residual_means: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("lowpass", "highpass"):
            raise InvalidArgument(f"unknown frequency kind {self.kind!r}")
        if self.color_mode not in ("color", "gray"):
            raise InvalidArgument(f"unknown color mode {self.color_mode!r}")
        if self.kind == "lowpass" and (math.isinf(self.sigma) or self.sigma < 0):
            raise InvalidArgument("low-pass sigma must be finite and >= 0")
        if self.kind == "highpass" and not self.sigma > 0:
            raise InvalidArgument("high-pass sigma must be > 0 or INF")


def _prepare(img, color_mode):
    arr = as_image(img)
    if color_mode == "gray" and arr.ndim == 3:
        return ensure_gray(arr)
    return arr


def lowpass(img, spec: FrequencySpec) -> np.ndarray:
    if spec.kind != "lowpass":
        raise InvalidArgument("lowpass needs a lowpass spec")
    return gaussian_blur(_prepare(img, spec.color_mode), spec.sigma)


def _means_for(arr, residual_means):
    if residual_means is None:
        raise InvalidArgument("high-pass filtering needs residual_means")
    means = np.atleast_1d(np.asarray(residual_means, dtype=np.float64))
    if arr.ndim == 2:
        return float(means.mean()) if means.size != 1 else float(means[0])
    if means.size == 1:
        return np.full(arr.shape[2], means[0])
    if means.size != arr.shape[2]:
        raise InvalidArgument(f"{means.size} residual means for {arr.shape[2]} channels")
    return means


def highpass(img, spec: FrequencySpec) -> np.ndarray:
    """``I - blur(I) + mean_val`` per channel; INF sigma subtracts the global mean instead.

    Not clamped; values leave [0, 1] until the image is persisted.
    """
    if spec.kind != "highpass":
        raise InvalidArgument("highpass needs a highpass spec")
    arr = _prepare(img, spec.color_mode)
    offset = _means_for(arr, spec.residual_means)
    if math.isinf(spec.sigma):
        low = arr.mean(axis=(0, 1), keepdims=True) * np.ones_like(arr)
    else:
        low = gaussian_blur(arr, spec.sigma)
    return arr - low + offset


def residual_means(corpus, color_mode: str = "color") -> tuple:
    """Per-channel mean intensity over a validation corpus (gray mode: one value)."""
    images = [_prepare(img, color_mode) for img in corpus]
    if not images:
        raise InvalidArgument("corpus is empty")
    if images[0].ndim == 2:
        return (float(np.mean([img.mean() for img in images])),)
    return tuple(float(v) for v in np.mean([img.mean(axis=(0, 1)) for img in images], axis=0))


def _centered_distance(shape):
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.hypot(xs - (w / 2.0 - 0.5), ys - (h / 2.0 - 0.5))


def disc_radius(shape, fraction: float, iters: int = 60) -> float:
    """Radius of the centred disc covering ``fraction`` of the pixels, clipped by the frame."""
    dist = _centered_distance(shape)
    total = dist.size
    if fraction <= 0:
        return 0.0
    lo, hi = 0.0, float(dist.max()) + 1.0
    if fraction >= 1:
        return hi
    target = fraction * total
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.count_nonzero(dist < mid) < target:
            lo = mid
        else:
            hi = mid
    # pick the side whose pixel count is closer to the target
    n_lo, n_hi = np.count_nonzero(dist < lo), np.count_nonzero(dist < hi)
    return lo if abs(n_lo - target) <= abs(n_hi - target) else hi


@dataclass(frozen=True)
class OcclusionSpec:
    kind: str
    fraction: float
    fill: float | tuple = 0.5

    def __post_init__(self):
        if self.kind not in OCCLUSION_KINDS:
            raise InvalidArgument(f"unknown occlusion kind {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidArgument("occlusion fraction must lie in [0, 1]")


def occlusion_mask(shape, spec: OcclusionSpec) -> np.ndarray:
    """Boolean mask of occluded pixels."""
    h, w = shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    if spec.kind == "left2right":
        mask[:, : int(math.floor(spec.fraction * w + 0.5))] = True
    elif spec.kind == "top2bottom":
        mask[: int(math.floor(spec.fraction * h + 0.5)), :] = True
    elif spec.kind == "scotoma":
        mask = _centered_distance((h, w)) < disc_radius((h, w), spec.fraction)
    else:
        mask = ~(_centered_distance((h, w)) < disc_radius((h, w), 1.0 - spec.fraction))
    return mask


def occlude(img, spec: OcclusionSpec) -> np.ndarray:
    arr = as_image(img)
    mask = occlusion_mask(arr.shape, spec)
    out = arr.copy()
    fill = np.asarray(spec.fill, dtype=np.float64)
    if arr.ndim == 2 and fill.size > 1:
        fill = fill.mean()
    out[mask] = fill
    return out


@dataclass(frozen=True)
class CueConflictSpec:
    kind: str
    foveal_ratio: float
    feather: float = 0.0
    inner_class: str | None = None
    outer_class: str | None = None

    def __post_init__(self):
        if self.kind not in ("window", "square"):
            raise InvalidArgument(f"unknown cue-conflict kind {self.kind!r}")
        if not 0.0 <= self.foveal_ratio <= 1.0:
            raise InvalidArgument("foveal_ratio must lie in [0, 1]")
        if self.feather < 0:
            raise InvalidArgument("feather must be >= 0")
        if self.inner_class is not None and self.inner_class == self.outer_class:
            raise InvalidArgument("inner and outer images must come from different classes")


def square_side(width: int, ratio: float) -> float:
    return width * math.sqrt(ratio)


def cue_conflict_mask(shape, spec: CueConflictSpec) -> np.ndarray:
    """Weight of the inner (foveal) image per pixel; binary when ``feather`` is 0."""
    h, w = shape[:2]
    if spec.kind == "window":
        radius = disc_radius((h, w), spec.foveal_ratio)
        signed = radius - _centered_distance((h, w))
    else:
        # one pixel per unit of side; ratio 1 covers the whole frame
        half = square_side(w, spec.foveal_ratio) / 2.0
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        cheb = np.maximum(np.abs(xs - (w / 2.0 - 0.5)), np.abs(ys - (h / 2.0 - 0.5)) * w / h)
        signed = half - cheb
    if spec.feather == 0 or spec.foveal_ratio in (0.0, 1.0):
        return (signed > 0).astype(np.float64)
    t = np.clip(signed / spec.feather, -0.5, 0.5)
    return 0.5 + 0.5 * np.sin(math.pi * t)


def cue_conflict(inner, outer, spec: CueConflictSpec) -> np.ndarray:
    a, b = as_image(inner), as_image(outer)
    if a.shape != b.shape:
        raise InvalidArgument(f"inner {a.shape} and outer {b.shape} differ in size")
    mask = cue_conflict_mask(a.shape, spec)
    if spec.feather == 0 or spec.foveal_ratio in (0.0, 1.0):
        sel = mask > 0.5
        return np.where(sel[..., None] if a.ndim == 3 else sel, a, b)
    m = mask[..., None] if a.ndim == 3 else mask
    return m * a + (1.0 - m) * b


def pair_classes(classes: Sequence[str], kind: str, seed: int = 0,
                 n: int | None = None) -> list[tuple[str, str]]:
    """Inner/outer class pairs.

    ``window`` pairs each class with the next one cyclically; ``square`` pairs
    each item with a uniformly drawn different class.
    """
    classes = list(classes)
    if len(set(classes)) < 2:
        raise InvalidArgument("need at least two distinct classes to pair")
    distinct = sorted(set(classes))
    if kind == "window":
        nxt = {c: distinct[(i + 1) % len(distinct)] for i, c in enumerate(distinct)}
        return [(c, nxt[c]) for c in classes]
    if kind != "square":
        raise InvalidArgument(f"unknown cue-conflict kind {kind!r}")
    rng = np.random.default_rng(seed)
    out = []
    for c in classes:
        others = [d for d in distinct if d != c]
        out.append((c, others[int(rng.integers(len(others)))]))
    return out


@dataclass(frozen=True)
class PredictionRecord:
    path: str
    ratio: float
    inner_class: str
    outer_class: str
    predicted_class: str


def parse_predictions(lines: Iterable[str]) -> list[PredictionRecord]:
    """Parse the prediction CSV (``path,ratio,inner_class,outer_class,predicted_class``)."""
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise PredictionParseError("empty prediction file", 1) from None
    if tuple(h.strip() for h in header) != PREDICTION_HEADER:
        raise PredictionParseError(f"expected header {','.join(PREDICTION_HEADER)}", 1)
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(PREDICTION_HEADER):
            raise PredictionParseError(f"expected 5 fields, got {len(row)}", lineno)
        path, ratio, inner, outer, pred = (c.strip() for c in row)
        try:
            r = float(ratio)
        except ValueError:
            raise PredictionParseError(f"ratio {ratio!r} is not a number", lineno) from None
        if not 0.0 <= r <= 1.0:
            raise PredictionParseError(f"ratio {r} outside [0, 1]", lineno)
        if not inner or not outer or not pred:
            raise PredictionParseError("empty class label", lineno)
        records.append(PredictionRecord(path, r, inner, outer, pred))
    return records


@dataclass
class AccuracyCurve:
    ratios: list
    foveal_acc: list
    peripheral_acc: list
    counts: list = field(default_factory=list)
    crossover: float | None = None

    def rows(self):
        return list(zip(self.ratios, self.foveal_acc, self.peripheral_acc, self.counts))


def crossover_point(ratios, foveal_acc, peripheral_acc) -> float | None:
    """First ratio where foveal minus peripheral accuracy changes sign (linear interpolation)."""
    diff = np.asarray(foveal_acc, dtype=np.float64) - np.asarray(peripheral_acc, dtype=np.float64)
    for i in range(len(diff)):
        if diff[i] == 0.0:
            return float(ratios[i])
        if i + 1 < len(diff) and diff[i] * diff[i + 1] < 0:
            r0, r1 = ratios[i], ratios[i + 1]
            return float(r0 + (r1 - r0) * diff[i] / (diff[i] - diff[i + 1]))
    return None


def crossover(records: Sequence[PredictionRecord]) -> AccuracyCurve:
    by_ratio: dict[float, list[PredictionRecord]] = {}
    for rec in records:
        by_ratio.setdefault(rec.ratio, []).append(rec)
    if len(by_ratio) < 2:
        raise InvalidArgument("crossover analysis needs at least two distinct ratios")
    ratios = sorted(by_ratio)
    fov, per, counts = [], [], []
    for r in ratios:
        group = by_ratio[r]
        fov.append(sum(g.predicted_class == g.inner_class for g in group) / len(group))
        per.append(sum(g.predicted_class == g.outer_class for g in group) / len(group))
        counts.append(len(group))
    return AccuracyCurve(ratios, fov, per, counts, crossover_point(ratios, fov, per))
