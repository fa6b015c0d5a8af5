"""Image-text similarity scoring in the model's own image space.

The score asks "does this image lean toward the colors the model means by
this prompt": both the query image and the model's canonical target for the
prompt (synthesized over a reference depth ramp) are reduced to their mean
chromaticity offset from neutral, and the score is the cosine similarity of
those offsets scaled by 100. Chromaticity is invariant to the model's
multiplicative depth shading and to lighting intensity, which is what the
optimizer can actually control. Images arrive as float [0, 1] in sRGB
encoding (what an 8-bit PNG holds) and are decoded to linear first.
Deterministic, bounded [-100, 100]; a chroma-free (neutral) image scores 0
against every prompt.
"""

from __future__ import annotations

import numpy as np

from .model import ModelError, target_image

_REFERENCE_SIZE = 64
_NEUTRAL = 1.0 / 3.0
_DARK_FLOOR = 0.01   # pixels darker than this read as neutral


def _srgb_to_linear(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return np.where(s <= 0.04045, s / 12.92, np.power((s + 0.055) / 1.055, 2.4))


def _chroma_moments(rgb_linear: np.ndarray) -> np.ndarray:
    """Signed mean chromaticity offset from neutral; zero for gray images.

    Signed (not nonnegative) components keep unrelated images from
    correlating positively with every prompt.
    """
    pixels = rgb_linear.reshape(-1, 3)
    total = pixels.sum(axis=-1, keepdims=True)
    chroma = np.where(total > _DARK_FLOOR, pixels / np.maximum(total, _DARK_FLOOR),
                      _NEUTRAL)
    return chroma.mean(axis=0) - _NEUTRAL


def _reference_depth() -> np.ndarray:
    ramp = np.linspace(0.0, 1.0, _REFERENCE_SIZE)
    return np.tile(ramp[:, None], (1, _REFERENCE_SIZE))


def prompt_features(embedding: np.ndarray) -> np.ndarray:
    """Chroma moments of the model's canonical image for this prompt."""
    reference = target_image(embedding, _reference_depth(),
                             _REFERENCE_SIZE, _REFERENCE_SIZE)
    return _chroma_moments(reference)


def clip_score(image_srgb: np.ndarray, embedding: np.ndarray) -> float:
    """Cosine-similarity score x100 between image and prompt chroma moments."""
    image = np.asarray(image_srgb, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ModelError(f"image must be (H, W, 3), got {image.shape}")
    if not np.isfinite(image).all():
        raise ModelError("image contains non-finite values")

    f_img = _chroma_moments(_srgb_to_linear(image))
    f_txt = prompt_features(embedding)
    # chroma offsets below ~1e-4 are numeric noise, not a color lean
    if np.linalg.norm(f_img) < 1e-4 or np.linalg.norm(f_txt) < 1e-4:
        return 0.0
    denom = np.linalg.norm(f_img) * np.linalg.norm(f_txt)
    return float(np.clip(100.0 * (f_img @ f_txt) / denom, -100.0, 100.0))
