"""The four stage-1 image transforms.

``reference`` is the identity. ``foveate_texture`` replaces the content of each
peripheral pooling region with a blend of the original and a locally
scrambled, moment-matched texture. ``foveate_blur`` blends per-ring blurred
copies through the ring windows, and ``uniform_blur`` applies one Gaussian
blur everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from foveatex.errors import InvalidArgument
from foveatex.geometry import PoolingRegion, Tessellation
from foveatex.image import as_image, gaussian_blur

PUBLISHED_UNIFORM_SIGMA = 3.4737
# at 1.0 the scramble pushes corpus SSIM below what any Gaussian blur reaches
DEFAULT_ALPHA = 0.5


def reference(img) -> np.ndarray:
    return as_image(img).copy()


def uniform_blur(img, sigma: float) -> np.ndarray:
    return gaussian_blur(img, sigma)


@dataclass(frozen=True)
class TextureParams:
    """Blend strengths, RNG seed and scramble patch size for ``foveate_texture``.

    ``alpha`` is a single strength for every peripheral region, one value per
    ring (fovea first), or one value per region in tessellation order. The
    fovea is always forced to 0.
    """

    alpha: float | Sequence[float] = DEFAULT_ALPHA
    seed: int = 0
    patch: int = 4

    def __post_init__(self):
        if self.patch < 1:
            raise InvalidArgument("patch must be >= 1")
        vals = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        if np.any(vals < 0) or np.any(vals > 1) or not np.all(np.isfinite(vals)):
            raise InvalidArgument("alpha values must lie in [0, 1]")

    def region_alphas(self, tess: Tessellation) -> np.ndarray:
        vals = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        rings = np.array([r.ring_index for r in tess.regions])
        if vals.size == 1:
            out = np.full(len(tess.regions), vals[0])
        elif vals.size == tess.n_rings:
            out = vals[rings]
        elif vals.size == len(tess.regions):
            out = vals.copy()
        else:
            raise InvalidArgument(
                f"alpha has {vals.size} values; expected 1, {tess.n_rings} (rings) "
                f"or {len(tess.regions)} (regions)"
            )
        out[rings == 0] = 0.0
        return out

    def to_dict(self) -> dict:
        alpha = self.alpha if np.isscalar(self.alpha) else list(self.alpha)
        return {"alpha": alpha, "seed": self.seed, "patch": self.patch}


def _weighted_moments(x, w):
    total = w.sum()
    mean = (x * w).sum() / total
    var = (((x - mean) ** 2) * w).sum() / total
    return mean, var


def texturize_region(img: np.ndarray, region: PoolingRegion, rng: np.random.Generator,
                     patch: int = 4) -> np.ndarray:
    """Scrambled texture for one region, returned over the region's bounding box.

    Square tiles of ``patch`` pixels that touch the region support are shuffled
    among themselves, then each channel is shifted and scaled so its
    window-weighted mean and variance equal those of the original content.
    """
    sy, sx = region.slices
    q = img[sy, sx]
    w = region.weights
    t = q.copy()
    ny, nx = q.shape[0] // patch, q.shape[1] // patch
    if ny and nx:
        tile_mass = w[: ny * patch, : nx * patch].reshape(ny, patch, nx, patch).sum(axis=(1, 3))
        cells = np.argwhere(tile_mass > 0)
        if len(cells) > 1:
            order = rng.permutation(len(cells))
            for (dy, dx), (oy, ox) in zip(cells, cells[order]):
                t[dy * patch : (dy + 1) * patch, dx * patch : (dx + 1) * patch] = q[
                    oy * patch : (oy + 1) * patch, ox * patch : (ox + 1) * patch
                ]
    if w.sum() <= 0:
        return t
    planes = [(q, t)] if q.ndim == 2 else [(q[..., c], t[..., c]) for c in range(q.shape[2])]
    out = []
    for qc, tc in planes:
        mu_q, var_q = _weighted_moments(qc, w)
        mu_t, var_t = _weighted_moments(tc, w)
        if var_t > 1e-20:
            out.append((tc - mu_t) * np.sqrt(var_q / var_t) + mu_q)
        else:
            out.append(np.full_like(tc, mu_q))
    return out[0] if q.ndim == 2 else np.stack(out, axis=-1)


def _check_size(arr, tess: Tessellation):
    if arr.shape[:2] != tess.shape:
        raise InvalidArgument(f"image is {arr.shape[1]}x{arr.shape[0]}, tessellation expects "
                              f"{tess.shape[1]}x{tess.shape[0]}")


def foveate_texture(img, tess: Tessellation, params: TextureParams = TextureParams()) -> np.ndarray:
    """Per-region blend ``alpha * texture + (1 - alpha) * original``, composited by window.

    Written as ``I + sum_i w_i alpha_i (T_i - I)`` so that zero strengths leave
    the input untouched bit for bit.
    """
    arr = as_image(img)
    _check_size(arr, tess)
    alphas = params.region_alphas(tess)
    out = arr.copy()
    for idx, (region, alpha) in enumerate(zip(tess.regions, alphas)):
        if alpha == 0.0:
            continue
        rng = np.random.default_rng([params.seed, idx])
        tex = texturize_region(arr, region, rng, params.patch)
        sy, sx = region.slices
        w = region.weights if arr.ndim == 2 else region.weights[..., None]
        out[sy, sx] += (alpha * w) * (tex - arr[sy, sx])
    return out


@dataclass(frozen=True)
class SigmaSchedule:
    """Blur strengths: one per ring (``mode='per_ring'``, fovea first) or one global value."""

    mode: str
    sigma: float | tuple[float, ...]

    def __post_init__(self):
        if self.mode == "uniform":
            vals = [self.sigma]
        elif self.mode == "per_ring":
            vals = list(self.sigma)
            if not vals:
                raise InvalidArgument("per-ring schedule is empty")
            if vals[0] != 0:
                raise InvalidArgument("foveal sigma must be exactly 0")
            object.__setattr__(self, "sigma", tuple(float(v) for v in vals))
        else:
            raise InvalidArgument(f"unknown schedule mode {self.mode!r}")
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise InvalidArgument("sigma values must be finite and >= 0")

    @classmethod
    def per_ring(cls, sigmas) -> "SigmaSchedule":
        return cls("per_ring", tuple(sigmas))

    @classmethod
    def uniform(cls, sigma: float) -> "SigmaSchedule":
        return cls("uniform", float(sigma))

    def to_dict(self) -> dict:
        sigma = list(self.sigma) if self.mode == "per_ring" else self.sigma
        return {"mode": self.mode, "sigma": sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "SigmaSchedule":
        return cls(d["mode"], d["sigma"] if d["mode"] == "uniform" else tuple(d["sigma"]))

    @classmethod
    def load(cls, path) -> "SigmaSchedule":
        return cls.from_dict(json.loads(Path(path).read_text()))


def blend_rings(blurred: Sequence[np.ndarray], tess: Tessellation) -> np.ndarray:
    """``sum_n mask_n * blurred[n]``, accumulated in ring order."""
    masks = tess.ring_masks()
    out = np.zeros_like(blurred[0])
    for mask, b in zip(masks, blurred):
        out += (mask if b.ndim == 2 else mask[..., None]) * b
    return out


def foveate_blur(img, tess: Tessellation, schedule) -> np.ndarray:
    arr = as_image(img)
    _check_size(arr, tess)
    if not isinstance(schedule, SigmaSchedule):
        schedule = SigmaSchedule.per_ring(schedule)
    if schedule.mode != "per_ring":
        raise InvalidArgument("foveate_blur needs a per-ring schedule")
    if len(schedule.sigma) != tess.n_rings:
        raise InvalidArgument(
            f"schedule has {len(schedule.sigma)} values, tessellation has {tess.n_rings} rings"
        )
    cache: dict[float, np.ndarray] = {}
    blurred = []
    for s in schedule.sigma:
        if s not in cache:
            cache[s] = gaussian_blur(arr, s)
        blurred.append(cache[s])
    return blend_rings(blurred, tess)
