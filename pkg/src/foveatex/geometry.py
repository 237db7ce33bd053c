"""Log-polar pooling-region layout around a single fixation point.

The layout is a foveal disc surrounded by eccentricity rings whose boundaries
grow geometrically, each ring split into a fixed number of angular sectors.
Neighbouring rings and sectors cross-fade with raised-cosine ramps, so the
window weights of all regions sum to one at every pixel.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from foveatex.errors import InvalidArgument

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TessellationConfig:
    image_size: int = 256
    fixation: tuple[float, float] | None = None
    fovea_radius: float = 32.0
    scaling: float = 0.4
    max_eccentricity: float | None = None
    angular_sectors: int = 16

    def __post_init__(self):
        if self.image_size < 1:
            raise InvalidArgument("image_size must be positive")
        if not 0.0 < self.scaling < 1.0:
            raise InvalidArgument(f"scaling must lie in (0, 1), got {self.scaling}")
        if self.fovea_radius <= 0:
            raise InvalidArgument("fovea_radius must be > 0")
        if self.angular_sectors < 1:
            raise InvalidArgument("angular_sectors must be >= 1")
        fx, fy = self.center
        lo, hi = -0.5, self.image_size - 0.5
        if not (lo <= fx <= hi and lo <= fy <= hi):
            raise InvalidArgument(f"fixation {self.center} lies outside the image")
        if self.max_eccentricity is not None and self.max_eccentricity <= 0:
            raise InvalidArgument("max_eccentricity must be > 0")

    @property
    def center(self) -> tuple[float, float]:
        """Fixation in pixel-centre coordinates (x, y)."""
        if self.fixation is None:
            c = self.image_size / 2.0 - 0.5
            return (c, c)
        return (float(self.fixation[0]), float(self.fixation[1]))

    @property
    def max_ecc(self) -> float:
        """Configured max eccentricity, or the distance to the farthest frame corner."""
        if self.max_eccentricity is not None:
            return float(self.max_eccentricity)
        fx, fy = self.center
        edges = (-0.5, self.image_size - 0.5)
        return max(math.hypot(x - fx, y - fy) for x in edges for y in edges)

    @property
    def ratio(self) -> float:
        """Ratio between consecutive ring boundaries."""
        half = self.scaling / 2.0
        return (1.0 + half) / (1.0 - half)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixation"] = list(self.center)
        d["max_eccentricity"] = self.max_ecc
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TessellationConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in d.items() if k in known}
        if kwargs.get("fixation") is not None:
            kwargs["fixation"] = tuple(kwargs["fixation"])
        return cls(**kwargs)


@dataclass(frozen=True)
class PoolingRegion:
    ring_index: int
    sector_index: int
    radial_extent: tuple[float, float]
    angular_extent: tuple[float, float]
    bbox: tuple[int, int, int, int]  # y0, y1, x0, x1 (half-open)
    weights: np.ndarray = field(repr=False, compare=False)

    @property
    def slices(self) -> tuple[slice, slice]:
        y0, y1, x0, x1 = self.bbox
        return slice(y0, y1), slice(x0, x1)

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def full_window(self, shape) -> np.ndarray:
        out = np.zeros(shape[:2])
        out[self.slices] = self.weights
        return out


def ring_boundaries(cfg: TessellationConfig) -> list[float]:
    """Boundaries ``fovea_radius * r**n`` below max eccentricity, then max eccentricity."""
    max_ecc = cfg.max_ecc
    bounds = []
    b = float(cfg.fovea_radius)
    while b < max_ecc * (1.0 - 1e-12):
        bounds.append(b)
        b *= cfg.ratio
    if not bounds:
        raise InvalidArgument(
            f"fovea radius {cfg.fovea_radius} leaves no ring inside max eccentricity {max_ecc}"
        )
    return bounds + [max_ecc]


def _hann_step(t):
    t = np.clip(t, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(math.pi * t)


def radial_weights(ecc, boundaries, ratio) -> np.ndarray:
    """Ring window weights at eccentricities ``ecc``; shape ``(n_rings,) + ecc.shape``.

    Each interior boundary gets a cross-fade spanning half the log spacing,
    centred on the boundary. The outermost ring extends past max eccentricity.
    """
    ecc = np.asarray(ecc, dtype=np.float64)
    log_e = np.log(np.maximum(ecc, 1e-12))
    half = math.log(ratio) / 4.0
    interior = boundaries[:-1]
    # steps[n] is ~1 once we are outside boundary n
    steps = [_hann_step((log_e - math.log(b) + half) / (2.0 * half)) for b in interior]
    steps = [np.ones_like(ecc)] + steps + [np.zeros_like(ecc)]
    return np.stack([steps[n] - steps[n + 1] for n in range(len(steps) - 1)])


def angular_weights(theta, n_sectors: int) -> np.ndarray:
    """Sector window weights at polar angles ``theta``; shape ``(n_sectors,) + theta.shape``."""
    theta = np.asarray(theta, dtype=np.float64)
    if n_sectors == 1:
        return np.ones((1,) + theta.shape)
    pitch = TWO_PI / n_sectors
    out = []
    for k in range(n_sectors):
        d = np.abs((theta - (k + 0.5) * pitch + math.pi) % TWO_PI - math.pi)
        t = (d - pitch / 4.0) / (pitch / 2.0)
        out.append(1.0 - _hann_step(t))
    return np.stack(out)


@dataclass(frozen=True, eq=False)
class Tessellation:
    config: TessellationConfig
    rings: list[float]
    regions: list[PoolingRegion]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.config.image_size, self.config.image_size)

    @property
    def n_rings(self) -> int:
        """Ring count including the fovea (ring 0)."""
        return len(self.rings)

    def ring_extent(self, ring: int) -> tuple[float, float]:
        if ring == 0:
            return (0.0, self.rings[0])
        return (self.rings[ring - 1], self.rings[ring])

    @cached_property
    def _ring_masks(self) -> np.ndarray:
        masks = np.zeros((self.n_rings,) + self.shape)
        for reg in self.regions:
            masks[reg.ring_index][reg.slices] += reg.weights
        masks.setflags(write=False)
        return masks

    def ring_mask(self, ring: int) -> np.ndarray:
        """Sum of the sector windows of ``ring`` as a full-frame weight map."""
        if not 0 <= ring < self.n_rings:
            raise InvalidArgument(f"ring {ring} out of range [0, {self.n_rings})")
        return self._ring_masks[ring]

    def ring_masks(self) -> np.ndarray:
        return self._ring_masks

    def regions_in_ring(self, ring: int) -> list[PoolingRegion]:
        return [r for r in self.regions if r.ring_index == ring]

    def window_at(self, ring: int, sector: int, x, y) -> np.ndarray:
        """Analytic (unclipped) window of one region at arbitrary points."""
        fx, fy = self.config.center
        dx, dy = np.asarray(x) - fx, np.asarray(y) - fy
        rad = radial_weights(np.hypot(dx, dy), self.rings, self.config.ratio)[ring]
        if ring == 0:
            return rad
        ang = angular_weights(np.arctan2(dy, dx) % TWO_PI, self.config.angular_sectors)
        return rad * ang[sector]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "ratio": self.config.ratio,
            "rings": list(self.rings),
            "regions": [
                {
                    "ring": r.ring_index,
                    "sector": r.sector_index,
                    "radial_extent": list(r.radial_extent),
                    "angular_extent": list(r.angular_extent),
                    "bbox": {"y0": r.bbox[0], "y1": r.bbox[1], "x0": r.bbox[2], "x1": r.bbox[3]},
                }
                for r in self.regions
            ],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def build_tessellation(cfg: TessellationConfig | None = None) -> Tessellation:
    cfg = cfg or TessellationConfig()
    bounds = ring_boundaries(cfg)
    n = cfg.image_size
    fx, fy = cfg.center
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    dx, dy = xs - fx, ys - fy
    rad = radial_weights(np.hypot(dx, dy), bounds, cfg.ratio)
    ang = angular_weights(np.arctan2(dy, dx) % TWO_PI, cfg.angular_sectors)

    windows = [(0, 0, rad[0])]
    for ring in range(1, len(bounds)):
        for k in range(cfg.angular_sectors):
            windows.append((ring, k, rad[ring] * ang[k]))

    # regions are clipped to the frame; renormalise so they still sum to one
    total = np.zeros((n, n))
    for _, _, w in windows:
        total += w
    pitch = TWO_PI / cfg.angular_sectors
    regions = []
    for ring, k, w in windows:
        w = w / total
        nz_y = np.flatnonzero(w.any(axis=1))
        nz_x = np.flatnonzero(w.any(axis=0))
        if nz_y.size == 0:
            continue
        y0, y1, x0, x1 = int(nz_y[0]), int(nz_y[-1]) + 1, int(nz_x[0]), int(nz_x[-1]) + 1
        radial = (0.0, bounds[0]) if ring == 0 else (bounds[ring - 1], bounds[ring])
        angular = (0.0, TWO_PI) if ring == 0 else (k * pitch, (k + 1) * pitch)
        crop = np.ascontiguousarray(w[y0:y1, x0:x1])
        crop.setflags(write=False)
        regions.append(PoolingRegion(ring, k, radial, angular, (y0, y1, x0, x1), crop))
    return Tessellation(cfg, bounds, regions)
