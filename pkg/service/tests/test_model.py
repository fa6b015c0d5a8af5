import numpy as np
import pytest

from guidance_service import model, scoring

PROMPT = "a man in a suit with a belt and tie"


def test_embed_deterministic():
    a = model.embed_text(PROMPT)
    b = model.embed_text(PROMPT)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (model.EMBED_DIM,)
    assert a.dtype == np.float32


def test_embed_rejects_empty():
    with pytest.raises(model.ModelError):
        model.embed_text("")


def test_zoom_prefix_shares_palette():
    base, _ = model.palette_from_embedding(model.embed_text(PROMPT).astype(np.float64))
    zoom, _ = model.palette_from_embedding(
        model.embed_text("the face of " + PROMPT).astype(np.float64))
    assert np.array_equal(base, zoom)


def test_different_prompts_different_embeddings():
    a = model.embed_text("a red fox")
    b = model.embed_text("a blue whale")
    assert a.tobytes() != b.tobytes()


def test_alpha_bar_endpoints_and_monotonicity():
    assert model.alpha_bar(0.0) >= 0.999
    assert model.alpha_bar(1.0) <= 0.01
    values = [model.alpha_bar(t) for t in np.linspace(0, 1, 100)]
    assert np.all(np.diff(values) <= 1e-15)


def test_target_image_flat_without_depth():
    emb = model.embed_text(PROMPT).astype(np.float64)
    img = model.target_image(emb, None, 32, 32)
    assert img.shape == (32, 32, 3)
    assert np.ptp(img, axis=(0, 1)).max() < 1e-12


def test_target_image_banded_by_depth():
    emb = model.embed_text(PROMPT).astype(np.float64)
    depth = np.zeros((32, 32))
    depth[16:] = 1.0
    img = model.target_image(emb, depth, 32, 32)
    colors, _ = model.palette_from_embedding(emb)
    assert np.allclose(img[:16], colors[0] * 0.65, atol=1e-12)
    assert np.allclose(img[16:], colors[2] * 1.0, atol=1e-12)


def test_target_rejects_wrong_depth_shape():
    emb = model.embed_text(PROMPT).astype(np.float64)
    with pytest.raises(model.ModelError, match="depth"):
        model.target_image(emb, np.zeros((16, 16)), 32, 32)


def test_input_divisibility_validation():
    with pytest.raises(model.ModelError, match="divisible"):
        model.validate_image_shape((500, 500, 3))
    model.validate_image_shape((512, 512, 3))


def test_mmse_recovers_noise_at_zero_variance():
    emb = model.embed_text(PROMPT).astype(np.float64)
    rng = np.random.default_rng(0)
    depth = rng.random((32, 32))
    mu = model.target_image(emb, depth, 32, 32)
    for t in (0.1, 0.5, 0.9):
        a = model.alpha_bar(t)
        eps = rng.normal(size=mu.shape)
        z_t = np.sqrt(a) * mu + np.sqrt(1 - a) * eps
        pred = model.predict_noise(z_t, t, emb, depth=depth)
        assert np.allclose(pred, eps, atol=1e-5)  # f32 output


def test_omega_zero_equals_raw_conditional_bitwise():
    emb = model.embed_text(PROMPT).astype(np.float64)
    rng = np.random.default_rng(1)
    z_t = rng.normal(size=(16, 16, 3))
    depth = rng.random((16, 16))
    raw = model.predict_noise(z_t, 0.4, emb, depth=depth)
    with_omega = model.predict_noise(z_t, 0.4, emb, depth=depth, omega=0.0)
    assert raw.tobytes() == with_omega.tobytes()


def test_cfg_combination_formula():
    emb = model.embed_text(PROMPT).astype(np.float64)
    neg = model.embed_text("disfigured, ugly").astype(np.float64)
    rng = np.random.default_rng(2)
    z_t = rng.normal(size=(16, 16, 3))
    depth = rng.random((16, 16))
    omega = 1.5
    cond = model.predict_noise(z_t, 0.5, emb, depth=depth).astype(np.float64)
    uncond = model.predict_noise(z_t, 0.5, neg, depth=depth).astype(np.float64)
    combined = model.predict_noise(z_t, 0.5, emb, negative_embedding=neg,
                                   depth=depth, omega=omega)
    assert np.allclose(combined, (1 + omega) * cond - omega * uncond, atol=1e-5)


# -- scoring ---------------------------------------------------------------------

def _srgb(x):
    x = np.clip(x, 0, 1)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def test_score_deterministic_and_bounded():
    emb = model.embed_text(PROMPT)
    rng = np.random.default_rng(3)
    img = rng.random((32, 32, 3))
    s1 = scoring.clip_score(img, emb)
    s2 = scoring.clip_score(img, emb)
    assert s1 == s2
    assert -100.0 <= s1 <= 100.0


def test_matched_target_beats_blanks():
    emb = model.embed_text(PROMPT).astype(np.float64)
    depth = np.tile(np.linspace(0, 1, 64)[:, None], (1, 64))
    matched = _srgb(model.target_image(emb, depth, 64, 64))
    s_matched = scoring.clip_score(matched, emb)
    for blank in (np.zeros((64, 64, 3)), np.full((64, 64, 3), 0.5),
                  np.ones((64, 64, 3))):
        assert s_matched > scoring.clip_score(blank, emb)
    assert s_matched > 90.0


def test_score_rejects_bad_images():
    emb = model.embed_text(PROMPT)
    with pytest.raises(model.ModelError):
        scoring.clip_score(np.zeros((8, 8)), emb)
    with pytest.raises(model.ModelError):
        scoring.clip_score(np.full((8, 8, 3), np.nan), emb)
