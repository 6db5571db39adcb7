"""8-bit image files <-> float images in [-1, 1].

Byte ``b`` maps to ``2 * b / 255 - 1``; writing clamps to [-1, 1] and
inverts the map with round-half-up, so 8-bit images round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

_MODES = {1: "L", 2: "LA", 3: "RGB", 4: "RGBA"}


def bytes_to_float(b) -> np.ndarray:
    return 2.0 * (np.asarray(b, dtype=np.float64) / 255.0) - 1.0


def float_to_bytes(x) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.floor((x + 1.0) / 2.0 * 255.0 + 0.5).astype(np.uint8)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in _MODES.values():
            im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
        arr = np.asarray(im)
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: only 8-bit images are supported")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return bytes_to_float(arr)


def write_image(path, x) -> None:
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, :, None]
    channels = x.shape[2]
    if channels not in _MODES:
        raise ValueError(f"cannot write a {channels}-channel image")
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm") and channels not in (1, 3):
        raise ValueError("PGM/PPM hold 1 or 3 channels")
    data = float_to_bytes(x)
    im = Image.fromarray(data[:, :, 0] if channels == 1 else data)
    im.save(path)
