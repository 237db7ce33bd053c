"""Rate-distortion matching of blur strength to a target expected SSIM.

The "rate" of a transform is its mean SSIM against the reference image over
a corpus of grayscale images. Blur rate falls monotonically with sigma, so
the matching sigma is found by bisection, globally for uniform blur or
independently per eccentricity ring for foveated blur.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from foveatex import iqa
from foveatex.errors import InvalidArgument, UnreachableRate
from foveatex.geometry import Tessellation
from foveatex.image import ensure_gray, gaussian_blur
from foveatex.transforms import TextureParams, blend_rings, foveate_texture, reference

log = logging.getLogger(__name__)

SIGMA_MAX = 20.0
RATE_TOL = 1e-3
SIGMA_TOL = 1e-3
MONOTONE_NOISE = 1e-3


@dataclass(frozen=True)
class RdTarget:
    target_rate: float
    per_image_rates: tuple = ()
    ring: int | None = None

    def __post_init__(self):
        if not 0.0 < self.target_rate <= 1.0 + 1e-12:
            raise InvalidArgument(f"target rate must lie in (0, 1], got {self.target_rate}")


@dataclass
class RdMatchResult:
    mode: str
    sigma: float | list
    target: float | list
    achieved_rate: float | list
    residual: float | list
    iterations: int
    trace: list = field(default_factory=list)
    success: bool = True

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "sigma": self.sigma,
            "target": self.target,
            "achieved_rate": self.achieved_rate,
            "residual": self.residual,
            "iterations": self.iterations,
            "success": self.success,
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RdMatchResult":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def save_trace_csv(self, path) -> None:
        """One row per evaluated point: ring (empty for uniform), sigma, rate."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ring", "sigma", "rate"])
            for row in self.trace:
                w.writerow([row.get("ring", ""), repr(row["sigma"]), repr(row["rate"])])


def _gray_corpus(corpus) -> list[np.ndarray]:
    images = [ensure_gray(img) for img in corpus]
    if not images:
        raise InvalidArgument("corpus is empty")
    shape = images[0].shape
    if any(img.shape != shape for img in images):
        raise InvalidArgument("corpus images must share one size")
    return images


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _texture_pairs(corpus, tess, params, seeds, workers):
    seeds = list(seeds) if seeds is not None else [params.seed] * len(corpus)
    if len(seeds) != len(corpus):
        raise InvalidArgument("need one seed per corpus image")

    def render(i):
        p = TextureParams(params.alpha, seeds[i], params.patch)
        img = corpus[i]
        return ensure_gray(reference(img)), ensure_gray(foveate_texture(img, tess, p))

    return _map(render, range(len(corpus)), workers)


def compute_target_rate(corpus, tess: Tessellation, params: TextureParams = TextureParams(),
                        seeds=None, workers: int = 1) -> RdTarget:
    """Mean SSIM between grayscale reference and foveated-texture renders."""
    if len(corpus) == 0:
        raise InvalidArgument("corpus is empty")
    pairs = _texture_pairs(corpus, tess, params, seeds, workers)
    rates = tuple(iqa.ssim(ref, tex) for ref, tex in pairs)
    return RdTarget(float(np.mean(rates)), rates)


def compute_ring_targets(corpus, tess: Tessellation, params: TextureParams = TextureParams(),
                         seeds=None, workers: int = 1) -> list[RdTarget]:
    """Per-ring targets from ring-mask-weighted SSIM; the foveal target is fixed at 1."""
    if len(corpus) == 0:
        raise InvalidArgument("corpus is empty")
    pairs = _texture_pairs(corpus, tess, params, seeds, workers)
    maps = [iqa.ssim_map(ref, tex) for ref, tex in pairs]
    targets = [RdTarget(1.0, (), 0)]
    for ring in range(1, tess.n_rings):
        w = iqa.crop_to_valid(tess.ring_mask(ring))
        rates = tuple(iqa.weighted_mean(m, w) for m in maps)
        targets.append(RdTarget(float(np.mean(rates)), rates, ring))
    return targets


class RateCurve:
    """Expected (optionally weighted) SSIM of ``blur(I, sigma)`` against ``I``.

    Evaluations are memoised by sigma.
    """

    def __init__(self, corpus, weights=None, workers: int = 1):
        self.images = _gray_corpus(corpus)
        self.weights = None if weights is None else iqa.crop_to_valid(weights)
        self.workers = workers
        self._cache: dict[float, float] = {}

    def _one(self, img, sigma):
        smap = iqa.ssim_map(img, gaussian_blur(img, sigma))
        if self.weights is None:
            return float(smap.mean())
        return iqa.weighted_mean(smap, self.weights)

    def __call__(self, sigma: float) -> float:
        sigma = float(sigma)
        if sigma not in self._cache:
            if sigma == 0.0:
                self._cache[sigma] = 1.0
            else:
                rates = _map(lambda img: self._one(img, sigma), self.images, self.workers)
                self._cache[sigma] = float(np.mean(rates))
        return self._cache[sigma]

    def sample(self, sigmas) -> list[tuple[float, float]]:
        return [(float(s), self(s)) for s in sigmas]


def _check_monotone(trace, label=""):
    pts = sorted((row["sigma"], row["rate"]) for row in trace)
    for (s0, r0), (s1, r1) in zip(pts, pts[1:]):
        if r1 > r0 + MONOTONE_NOISE:
            warnings.warn(
                f"rate curve{label} is not monotone: rate({s1:.4g})={r1:.5f} > "
                f"rate({s0:.4g})={r0:.5f}; continuing on the monotone envelope",
                RuntimeWarning,
                stacklevel=3,
            )
            return False
    return True


def bisect_sigma(rate, target: float, sigma_max: float = SIGMA_MAX, rate_tol: float = RATE_TOL,
                 sigma_tol: float = SIGMA_TOL, lo: float = 0.0, ring: int | None = None,
                 max_iter: int = 200):
    """Find sigma in ``[lo, sigma_max]`` with ``rate(sigma)`` within ``rate_tol`` of ``target``.

    Returns ``(sigma, rate, iterations, trace)``.
    """
    trace = []

    def evaluate(s):
        r = rate(s)
        row = {"sigma": s, "rate": r}
        if ring is not None:
            row["ring"] = ring
        trace.append(row)
        return r

    if target >= 1.0:
        return 0.0, 1.0, 0, trace
    hi = float(sigma_max)
    r_hi = evaluate(hi)
    if abs(r_hi - target) <= rate_tol:
        return hi, r_hi, 1, trace
    if r_hi > target:
        where = f" in ring {ring}" if ring is not None else ""
        raise UnreachableRate(
            f"target rate {target:.5f}{where} is below rate(sigma_max={hi:g})={r_hi:.5f}",
            ring=ring,
        )
    # the envelope keeps the bracket valid if the sampled curve wiggles
    best = (hi, r_hi)
    iterations = 1
    while iterations < max_iter:
        mid = 0.5 * (lo + hi)
        r = evaluate(mid)
        iterations += 1
        if abs(r - target) < abs(best[1] - target):
            best = (mid, r)
        if abs(r - target) <= rate_tol:
            best = (mid, r)
            break
        if r > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= sigma_tol:
            break
    _check_monotone(trace, f" (ring {ring})" if ring is not None else "")
    return best[0], best[1], iterations, trace


def match_uniform(target: RdTarget | float, corpus, sigma_max: float = SIGMA_MAX,
                  rate_tol: float = RATE_TOL, sigma_tol: float = SIGMA_TOL,
                  workers: int = 1) -> RdMatchResult:
    """Uniform-blur sigma whose expected SSIM over ``corpus`` matches ``target``."""
    t = target.target_rate if isinstance(target, RdTarget) else float(target)
    curve = RateCurve(corpus, workers=workers)
    sigma, _, iters, trace = bisect_sigma(curve, t, sigma_max, rate_tol, sigma_tol)
    # independent re-evaluation, bypassing the curve cache
    achieved = RateCurve(corpus, workers=workers)(sigma)
    residual = abs(achieved - t)
    log.info("uniform match: sigma=%.4f rate=%.5f target=%.5f", sigma, achieved, t)
    return RdMatchResult("uniform", sigma, t, achieved, residual, iters, trace,
                         residual <= rate_tol)


def foveate_blur_ring_rates(corpus, tess: Tessellation, sigmas, workers: int = 1) -> list[float]:
    """Ring-weighted expected SSIM of ``foveate_blur`` outputs, one entry per ring."""
    images = _gray_corpus(corpus)
    weights = [iqa.crop_to_valid(tess.ring_mask(n)) for n in range(tess.n_rings)]

    def one(img):
        cache = {}
        blurred = [cache.setdefault(s, gaussian_blur(img, s)) for s in sigmas]
        smap = iqa.ssim_map(img, blend_rings(blurred, tess))
        return [iqa.weighted_mean(smap, w) for w in weights]

    per_image = np.array(_map(one, images, workers))
    return [float(v) for v in per_image.mean(axis=0)]


class _RingCoupledRate:
    """Rate of ring ``n`` in the actual foveated-blur composite as ``sigma_n`` varies."""

    def __init__(self, images, tess, sigmas, ring, workers):
        self.ring = ring
        self.images = images
        self.workers = workers
        self.weights = iqa.crop_to_valid(tess.ring_mask(ring))
        self.mask = tess.ring_mask(ring)
        masks = tess.ring_masks()

        def partial(img):
            cache = {}
            out = np.zeros_like(img)
            for m, (mask, s) in enumerate(zip(masks, sigmas)):
                if m != ring:
                    out += mask * cache.setdefault(s, gaussian_blur(img, s))
            return out

        self.partials = _map(partial, images, workers)
        self._cache: dict[float, float] = {}

    def __call__(self, sigma):
        sigma = float(sigma)
        if sigma not in self._cache:
            def one(k):
                img = self.images[k]
                cand = self.partials[k] + self.mask * gaussian_blur(img, sigma)
                return iqa.weighted_mean(iqa.ssim_map(img, cand), self.weights)

            self._cache[sigma] = float(np.mean(_map(one, range(len(self.images)), self.workers)))
        return self._cache[sigma]


def match_per_ring(targets: Sequence[RdTarget | float], corpus, tess: Tessellation,
                   sigma_max: float = SIGMA_MAX, rate_tol: float = RATE_TOL,
                   sigma_tol: float = SIGMA_TOL, refine: bool = True, max_sweeps: int = 6,
                   workers: int = 1) -> RdMatchResult:
    """Per-ring sigma schedule matching per-ring target rates; sigma_0 is fixed at 0.

    Each peripheral ring is first matched on its own curve
    ``E[ssim(I, blur(I, sigma); weight=ring_mask)]``. With ``refine`` the
    schedule is then corrected ring by ring against the blended foveated-blur
    output until every peripheral ring rate is within ``rate_tol``, since the
    cross-fades couple adjacent rings.
    """
    t = [tg.target_rate if isinstance(tg, RdTarget) else float(tg) for tg in targets]
    if len(t) != tess.n_rings:
        raise InvalidArgument(f"got {len(t)} targets for {tess.n_rings} rings")
    images = _gray_corpus(corpus)
    t[0] = 1.0
    sigmas = [0.0] * tess.n_rings
    trace: list = []
    iterations = 0
    for ring in range(1, tess.n_rings):
        curve = RateCurve(images, weights=tess.ring_mask(ring), workers=workers)
        s, _, it, tr = bisect_sigma(curve, t[ring], sigma_max, rate_tol, sigma_tol, ring=ring)
        sigmas[ring] = s
        iterations += it
        trace.extend(tr)

    achieved = foveate_blur_ring_rates(images, tess, sigmas, workers)
    tol = 0.5 * rate_tol if refine else rate_tol
    for sweep in range(max_sweeps if refine else 0):
        off = [n for n in range(1, tess.n_rings) if abs(achieved[n] - t[n]) > tol]
        if not off:
            break
        log.info("refinement sweep %d: rings %s off target", sweep, off)
        for ring in range(1, tess.n_rings):
            if abs(achieved[ring] - t[ring]) <= tol:
                continue
            coupled = _RingCoupledRate(images, tess, sigmas, ring, workers)
            try:
                s, _, it, _ = bisect_sigma(coupled, t[ring], sigma_max, tol, sigma_tol,
                                           ring=ring)
            except UnreachableRate:
                s, it = sigma_max, 1
            sigmas[ring] = s
            iterations += it
            achieved = foveate_blur_ring_rates(images, tess, sigmas, workers)

    residual = [abs(a - b) for a, b in zip(achieved, t)]
    success = all(r <= rate_tol for r in residual[1:])
    return RdMatchResult("per_ring", sigmas, t, achieved, residual, iterations, trace, success)


def rate_curve_rows(corpus, sigmas, tess: Tessellation | None = None, workers: int = 1):
    """(ring, sigma, rate) rows of the blur rate curves: uniform if ``tess`` is None."""
    rows = []
    if tess is None:
        curve = RateCurve(corpus, workers=workers)
        rows.extend(("", s, r) for s, r in curve.sample(sigmas))
    else:
        images = _gray_corpus(corpus)
        for ring in range(tess.n_rings):
            curve = RateCurve(images, weights=tess.ring_mask(ring), workers=workers)
            rows.extend((ring, s, r) for s, r in curve.sample(sigmas))
    return rows
