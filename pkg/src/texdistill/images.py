"""PNG export/import and the sRGB transfer, shared by shading and baking."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return np.where(s <= 0.04045, s / 12.92, np.power((s + 0.055) / 1.055, 2.4))


def quantize_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)


def write_png(path: str | Path, data: np.ndarray, srgb: bool = False) -> None:
    """Write float [0,1] image data (H,W) or (H,W,3) as 8-bit PNG."""
    arr = linear_to_srgb(data) if srgb else np.clip(data, 0.0, 1.0)
    img = Image.fromarray(quantize_u8(arr), mode="RGB" if arr.ndim == 3 else "L")
    img.save(Path(path))


def read_png(path: str | Path, srgb: bool = False) -> np.ndarray:
    """Read PNG as float [0,1]; decodes to linear if srgb=True."""
    img = Image.open(Path(path))
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return srgb_to_linear(arr) if srgb else arr
