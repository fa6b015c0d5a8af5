"""Deterministic procedural diffusion model.

Stands in for a pretrained depth-conditioned text-to-image model: every prompt
maps (via hashing, stable across processes for a pinned model version) to a
compact embedding that carries a 3-color palette; the model's "data
distribution" for that prompt is a delta on a depth-modulated 8x8-block
palette image, and noise prediction is the exact MMSE estimator for that
distribution under the model's noise schedule. The latent space is the pixel
image itself (identity autoencoder); all image dimensions must be divisible
by the 8-pixel block size.
"""

from __future__ import annotations

import hashlib

import numpy as np

MODEL_VERSION = "procedural-diffusion-v1"
EMBED_DIM = 64
INPUT_MULTIPLE = 8
_PALETTE_COLORS = 3

SCHEDULE = {"family": "scaled_linear", "num_steps": 1000,
            "beta_start": 0.00085, "beta_end": 0.012}


class ModelError(ValueError):
    pass


def _alpha_bar_table() -> np.ndarray:
    betas = np.linspace(np.sqrt(SCHEDULE["beta_start"]),
                        np.sqrt(SCHEDULE["beta_end"]),
                        SCHEDULE["num_steps"]) ** 2
    return np.cumprod(1.0 - betas)


_ALPHA_BAR = _alpha_bar_table()


def alpha_bar(t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise ModelError(f"timestep {t} outside [0, 1]")
    x = t * (SCHEDULE["num_steps"] - 1)
    i0 = int(np.clip(np.floor(x), 0, SCHEDULE["num_steps"] - 2))
    frac = x - i0
    return float(_ALPHA_BAR[i0] * (1.0 - frac) + _ALPHA_BAR[i0 + 1] * frac)


def _seed_rng(text: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{MODEL_VERSION}\x00{text}".encode()).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    h = h % 1.0
    i = int(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return np.array([(v, t, p), (q, v, p), (p, v, t),
                     (p, q, v), (t, p, v), (v, p, q)][i % 6])


def _token_salience(token: str) -> float:
    digest = hashlib.sha256(f"{MODEL_VERSION}\x00salience\x00{token}".encode()).digest()
    return digest[0] / 255.0


def _token_color(token: str, hue_shift: float = 0.0) -> np.ndarray:
    """One saturated anchor color per token (stable hue in HSV)."""
    rng = _seed_rng(f"token\x00{token}")
    hue = (rng.random() + hue_shift) % 1.0
    sat = 0.6 + 0.3 * rng.random()
    val = 0.65 + 0.3 * rng.random()
    return _hsv_to_rgb(hue, sat, val)


_STOP_WORDS = {"a", "an", "the", "of", "in", "on", "with", "and", "face"}


def embed_text(prompt: str) -> np.ndarray:
    """Deterministic (EMBED_DIM,) f32 embedding carrying the prompt palette.

    The palette anchors are the saturated colors of the prompt's three most
    salient content tokens (stop and framing words are ignored), so a prompt
    and its zoom-prefixed "the face of ..." variant share the same palette.
    Layout: [0:9] three RGB anchor colors, [9:12] raw anchor weights, [12:]
    whole-prompt hash noise separating prompts with equal palettes.
    """
    if not prompt:
        raise ModelError("prompt must be nonempty")
    tokens = "".join(c if c.isalnum() else " " for c in prompt.lower()).split()
    content = sorted(set(t for t in tokens if t not in _STOP_WORDS)) or sorted(set(tokens))
    ranked = sorted(content, key=lambda t: (-_token_salience(t), t))[:_PALETTE_COLORS]
    colors = [_token_color(t) for t in ranked]
    while len(colors) < _PALETTE_COLORS:
        # thin prompts: pad with hue-rotated variants of the last anchor
        colors.append(_token_color(ranked[-1], hue_shift=len(colors) / 3.0))
    colors = np.clip(np.stack(colors), 0.02, 0.98)
    weights = np.array([0.5 + _token_salience(f"{t}\x00weight") for t in ranked]
                       + [0.5] * (_PALETTE_COLORS - len(ranked)))
    rng = _seed_rng(f"prompt\x00{prompt}")
    noise = rng.uniform(-1.0, 1.0, EMBED_DIM - 9 - _PALETTE_COLORS)
    emb = np.concatenate([np.asarray(colors).reshape(-1), weights, noise])
    return emb.astype(np.float32)


def palette_from_embedding(embedding: np.ndarray):
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.shape != (EMBED_DIM,):
        raise ModelError(f"embedding must have shape ({EMBED_DIM},), got {emb.shape}")
    colors = np.clip(emb[:9].reshape(_PALETTE_COLORS, 3), 0.0, 1.0)
    raw_w = np.maximum(emb[9:9 + _PALETTE_COLORS], 1e-6)
    return colors, raw_w / raw_w.sum()


def validate_image_shape(shape, name: str = "image") -> None:
    if len(shape) != 3 or shape[2] != 3:
        raise ModelError(f"{name} must be (H, W, 3), got {tuple(shape)}")
    h, w = shape[0], shape[1]
    if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
        raise ModelError(f"{name} dimensions {h}x{w} must be divisible by "
                         f"{INPUT_MULTIPLE}")


def target_image(embedding: np.ndarray, depth: np.ndarray | None,
                 height: int, width: int) -> np.ndarray:
    """The prompt's ideal image under this model.

    With depth conditioning, the geometry is painted by depth structure:
    the depth map is pooled to the 8x8-block grid, each block takes the
    palette anchor of its depth band, and the whole image is shaded by
    depth. Banding by depth keeps guidance consistent across nearby views
    of the same object, which is what lets a multi-view optimization
    against this model converge. Without depth the target is the flat
    weighted palette blend.
    """
    colors, weights = palette_from_embedding(embedding)
    bh, bw = height // INPUT_MULTIPLE, width // INPUT_MULTIPLE
    if depth is None:
        blend = weights @ colors
        return np.tile(blend, (height, width, 1))
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (height, width):
        raise ModelError(f"depth must be ({height}, {width}), got {depth.shape}")
    # pool to the block grid: the model conditions at block granularity
    pooled = np.clip(depth.reshape(bh, INPUT_MULTIPLE, bw, INPUT_MULTIPLE)
                     .mean(axis=(1, 3)), 0.0, 1.0)
    band = np.minimum((pooled * _PALETTE_COLORS).astype(int), _PALETTE_COLORS - 1)
    img = colors[np.repeat(np.repeat(band, INPUT_MULTIPLE, 0), INPUT_MULTIPLE, 1)]
    shade = 0.65 + 0.35 * pooled
    img = img * np.repeat(np.repeat(shade, INPUT_MULTIPLE, 0),
                          INPUT_MULTIPLE, 1)[..., None]
    return img


def _mmse_noise(z_t: np.ndarray, mu: np.ndarray, a: float) -> np.ndarray:
    return (z_t - np.sqrt(a) * mu) / np.sqrt(1.0 - a)


def predict_noise(z_t: np.ndarray, t: float, embedding: np.ndarray,
                  negative_embedding: np.ndarray | None = None,
                  depth: np.ndarray | None = None,
                  omega: float | None = None) -> np.ndarray:
    """MMSE noise prediction; CFG-combined when omega is provided.

    The unconditional branch uses the negative-prompt palette when supplied,
    a neutral gray otherwise.
    """
    z = np.asarray(z_t, dtype=np.float64)
    validate_image_shape(z.shape, "z_t")
    a = alpha_bar(t)
    h, w = z.shape[:2]
    mu_cond = target_image(embedding, depth, h, w)
    cond = _mmse_noise(z, mu_cond, a)
    if omega is None or omega == 0.0:
        return cond.astype(np.float32)
    if negative_embedding is not None:
        mu_uncond = target_image(negative_embedding, depth, h, w)
    else:
        mu_uncond = np.full_like(z, 0.5)
    uncond = _mmse_noise(z, mu_uncond, a)
    return ((1.0 + omega) * cond - omega * uncond).astype(np.float32)


def encode_image(image: np.ndarray) -> np.ndarray:
    """Identity latent (this model's latent space is the pixel image)."""
    validate_image_shape(image.shape)
    return np.asarray(image, dtype=np.float32)


def decode_latent(latent: np.ndarray) -> np.ndarray:
    validate_image_shape(latent.shape, "latent")
    return np.asarray(latent, dtype=np.float32)


def model_card() -> dict:
    return {
        "model_version": MODEL_VERSION,
        "schedule": dict(SCHEDULE),
        "embed_dim": EMBED_DIM,
        "input_multiple": INPUT_MULTIPLE,
        "pixel_latent": True,
        "latent_channels": 3,
        "depth_conditioned": True,
    }
