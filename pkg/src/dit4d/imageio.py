"""PNG and JSON persistence.

PNGs are 8-bit and for inspection; JSON sidecars carry exact float64
values (Python's repr round-trips doubles) and are authoritative for
anything numeric. Writes go through a temp file + rename so readers never
see partial files.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image


def save_png(path: str, image: np.ndarray) -> None:
    """image: (H, W, 3) float in [0, 1] or (3, H, W)."""
    if image.ndim == 3 and image.shape[0] == 3 and image.shape[-1] != 3:
        image = np.moveaxis(image, 0, 2)
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    tmp = path + ".tmp"
    Image.fromarray(arr, mode="RGB").save(tmp, format="PNG")
    os.replace(tmp, path)


def load_png(path: str, chw: bool = False) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return np.moveaxis(arr, 2, 0) if chw else arr


def save_normal_png(path: str, normals: np.ndarray) -> None:
    """Unit normals in [-1,1] mapped to [0,1]; background (0,0,0) maps to mid-gray."""
    save_png(path, (normals + 1.0) / 2.0)


def load_normal_png(path: str) -> np.ndarray:
    """Inverse of save_normal_png; sub-unit-length pixels are background."""
    n = load_png(path) * 2.0 - 1.0
    mag = np.linalg.norm(n, axis=2)
    n[mag < 0.5] = 0.0
    return n


def save_json(path: str, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=1)
    os.replace(tmp, path)


def load_json(path: str):
    with open(path) as f:
        return json.load(f)
