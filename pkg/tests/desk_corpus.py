"""Seeded 256x256 natural-image corpus built from scikit-image's bundled photos."""

import numpy as np
from PIL import Image
from skimage import data

SOURCES = (
    "astronaut", "camera", "coffee", "chelsea", "moon", "rocket", "hubble_deep_field",
    "immunohistochemistry", "grass", "gravel", "brick", "cell", "retina", "clock",
    "coins", "cat",
)


def _load(name):
    arr = np.asarray(getattr(data, name)())
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return arr[..., :3].astype(np.uint8)


def desk_corpus(n=20, size=256, seed=0):
    """``n`` RGB float images in [0, 1], random square crops resized to ``size``."""
    rng = np.random.default_rng(seed)
    photos = [_load(name) for name in SOURCES]
    out = []
    for i in range(n):
        src = photos[i % len(photos)]
        h, w = src.shape[:2]
        side = int(rng.integers(min(size, h, w), min(h, w) + 1))
        y = int(rng.integers(0, h - side + 1))
        x = int(rng.integers(0, w - side + 1))
        crop = Image.fromarray(src[y : y + side, x : x + side]).resize((size, size), Image.LANCZOS)
        out.append(np.asarray(crop, dtype=np.float64) / 255.0)
    return out
