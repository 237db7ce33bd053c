"""8-bit image files (PNG, plus PGM/PPM) and content checksums."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

import numpy as np
from PIL import Image

from foveatex.image import dequantize, quantize

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}


def read_image(path) -> np.ndarray:
    """Load an 8-bit image as float64 in [0, 1]. Alpha is dropped, no colour management."""
    with Image.open(path) as im:
        if im.mode in ("L", "RGB"):
            pass
        elif im.mode in ("1", "I;16", "I", "F", "LA"):
            im = im.convert("L")
        else:
            im = im.convert("RGB")
        return dequantize(np.asarray(im))


def write_image(path, img) -> None:
    """Quantise and write ``img``. Writes to a temporary file first, then renames."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = quantize(img)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(data).save(tmp, format=fmt)
    os.replace(tmp, path)


def list_images(root) -> list[Path]:
    """Image files under ``root`` (recursive), sorted by relative path."""
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.relative_to(root).as_posix(),
    )


def checksum(path) -> str:
    """64-bit BLAKE2b digest of the file contents, hex encoded."""
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
