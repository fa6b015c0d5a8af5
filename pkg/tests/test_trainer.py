import dataclasses
import json

import numpy as np
import pytest

from texdistill import field as mf
from texdistill import geometry as geo
from texdistill import guidance as gd
from texdistill import primitives as prim
from texdistill import shading, trainer
from texdistill.remote import GuidanceUnavailable

PROMPT = "a test subject"
TARGET = np.array([0.8, 0.25, 0.2])
RES = (24, 24)


@pytest.fixture(scope="module")
def env():
    return shading.prefilter(shading.EnvironmentLight.constant(1.0, size=16),
                             n_samples=128, irradiance_size=4)


@pytest.fixture(scope="module")
def sphere():
    mesh = prim.make_uv_sphere(rings=8, segments=12)
    return dataclasses.replace(mesh, face_center=np.array([0.0, 0.7, 0.6]))


@pytest.fixture
def scene(env, sphere):
    return trainer.Scene(
        mesh=sphere, env=env,
        body_cameras=geo.body_camera_config(resolution=RES),
        face_cameras=geo.face_camera_config(resolution=RES),
        face_center=sphere.face_center)


def analytic_backend():
    sched = gd.NoiseSchedule()
    den = gd.AnalyticDenoiser(sched, default=gd.GaussianSpec(TARGET, 0.0))
    return gd.AnalyticBackend(den)


def small_config(**overrides) -> trainer.TrainConfig:
    defaults = dict(iterations=8, resolution=RES, seed=0, grad_clip=None,
                    checkpoint_every=0, preview_every=0, albedo_reg_weight=0.01)
    defaults.update(overrides)
    return trainer.TrainConfig(**defaults)


def guidance_cfg(**overrides) -> gd.GuidanceConfig:
    defaults = dict(lam=0.5, omega=0.0, prompt=PROMPT, depth_conditioning=True)
    defaults.update(overrides)
    return gd.GuidanceConfig(**defaults)


def run_steps(scene, config, gcfg, n=None):
    state = trainer.init_state(config)
    backend = analytic_backend()
    embeddings = {}
    diags = []
    for _ in range(n or config.iterations):
        diags.append(trainer.train_step(state, scene, backend, gcfg, config, embeddings))
    return state, diags


def test_zoom_cadence_and_prompt_prefix(scene):
    _, diags = run_steps(scene, small_config(iterations=9), guidance_cfg())
    for d in diags:
        if d["step"] % 4 == 0:
            assert d["camera"] == "face"
            assert d["prompt"] == "the face of " + PROMPT
        else:
            assert d["camera"] == "body"
            assert d["prompt"] == PROMPT


def test_lambda_zero_matches_pure_sds_trajectory(scene):
    gcfg_dsd = guidance_cfg(lam=0.0)
    state_dsd, _ = run_steps(scene, small_config(mode="dsd"), gcfg_dsd)
    state_sds, _ = run_steps(scene, small_config(mode="sds"), gcfg_dsd)
    for name in state_dsd.field.parameter_names():
        assert state_dsd.field.params[name].data.tobytes() == \
            state_sds.field.params[name].data.tobytes(), name


def test_training_moves_render_toward_target(scene):
    config = small_config(iterations=80)
    gcfg = guidance_cfg()
    state = trainer.init_state(config)
    backend = analytic_backend()

    def frontal_error(st):
        cam = geo.Camera(radius=3.0, elevation=0.1, azimuth=0.6,
                         look_at=np.zeros(3), resolution=RES)
        _, img = trainer.render_view(st.field, scene.mesh, scene.env, cam)
        return float(np.abs(img.foreground.data - TARGET).mean())

    before = frontal_error(state)
    embeddings = {}
    for _ in range(config.iterations):
        trainer.train_step(state, scene, backend, gcfg, config, embeddings)
    after = frontal_error(state)
    assert after < before * 0.5
    assert after < 0.1


def test_negative_cache_stamp_behind_iteration(scene):
    config = small_config(iterations=3)
    state, _ = run_steps(scene, config, guidance_cfg())
    assert state.negative_cache is not None
    assert state.negative_cache.iteration < state.iteration


def test_run_zero_iterations_writes_initial_checkpoint(scene, tmp_path):
    report = trainer.run(small_config(iterations=0), scene, analytic_backend(),
                         guidance_cfg(), tmp_path)
    assert (tmp_path / "field.svbf").exists()
    assert report["iterations"] == 0
    loaded = mf.load_checkpoint(tmp_path / "field.svbf")
    fresh = mf.MaterialField(mf.FieldConfig(), seed=0)
    assert np.array_equal(loaded.params["w1"].data,
                          fresh.params["w1"].data.astype("<f4").astype(np.float64))


def test_seeded_runs_identical_checkpoints(scene, tmp_path):
    cfgs = [small_config(iterations=10, seed=7) for _ in range(2)]
    blobs = []
    for i, cfg in enumerate(cfgs):
        out = tmp_path / f"run{i}"
        trainer.run(cfg, scene, analytic_backend(), guidance_cfg(), out)
        blobs.append((out / "field.svbf").read_bytes())
    assert blobs[0] == blobs[1]


def test_resume_matches_uninterrupted_run(scene, tmp_path):
    gcfg = guidance_cfg()
    full_out = tmp_path / "full"
    trainer.run(small_config(iterations=16, seed=3), scene, analytic_backend(),
                gcfg, full_out)

    part_out = tmp_path / "part"
    trainer.run(small_config(iterations=8, seed=3), scene, analytic_backend(),
                gcfg, part_out)
    trainer.run(small_config(iterations=16, seed=3), scene, analytic_backend(),
                gcfg, part_out, resume_from=part_out / "train_state.npz")

    full = trainer.load_state(full_out / "train_state.npz", mf.FieldConfig(),
                              small_config(seed=3))
    resumed = trainer.load_state(part_out / "train_state.npz", mf.FieldConfig(),
                                 small_config(seed=3))
    for name in full.field.parameter_names():
        assert full.field.params[name].data.tobytes() == \
            resumed.field.params[name].data.tobytes(), name


class FlakyBackend:
    """Wraps the analytic backend; one selected step yields NaN predictions."""

    name = "flaky"

    def __init__(self, poison_call: int):
        self.inner = analytic_backend()
        self.schedule = self.inner.schedule
        self.calls = 0
        self.poison_call = poison_call

    def embed(self, prompt):
        return prompt

    def predict(self, z_t, embedding, t, depth, omega):
        self.calls += 1
        if self.calls == self.poison_call:
            return np.full_like(z_t, np.nan)
        return self.inner.predict(z_t, embedding, t, depth, omega)


def test_nonfinite_gradient_skips_step_leaves_params(scene):
    config = small_config(iterations=2)
    gcfg = guidance_cfg()
    state = trainer.init_state(config)
    backend = FlakyBackend(poison_call=1)
    before = {n: p.data.copy() for n, p in state.field.params.items()}
    diag = trainer.train_step(state, scene, backend, gcfg, config, {})
    assert diag["skipped"] and "non-finite" in diag["event"]
    for name, arr in before.items():
        assert np.array_equal(arr, state.field.params[name].data)
    diag2 = trainer.train_step(state, scene, backend, gcfg, config, {})
    assert not diag2["skipped"]


class DeadBackend:
    name = "dead"

    def __init__(self):
        self.schedule = gd.NoiseSchedule()

    def embed(self, prompt):
        return prompt

    def predict(self, *args, **kwargs):
        raise GuidanceUnavailable("connection refused")


def test_unreachable_guidance_skips_and_continues(scene):
    config = small_config(iterations=1)
    state = trainer.init_state(config)
    diag = trainer.train_step(state, scene, DeadBackend(), guidance_cfg(), config, {})
    assert diag["skipped"] and "guidance" in diag["event"]
    assert state.iteration == 1


def test_run_writes_diagnostics_ndjson(scene, tmp_path):
    trainer.run(small_config(iterations=5), scene, analytic_backend(),
                guidance_cfg(), tmp_path)
    lines = (tmp_path / "diagnostics.ndjson").read_text().strip().splitlines()
    assert len(lines) == 5
    records = [json.loads(line) for line in lines]
    assert [r["step"] for r in records] == list(range(5))
    assert all("t" in r and "dsd_loss" in r for r in records)


def test_run_requires_face_center(scene, tmp_path):
    scene_no_face = dataclasses.replace(scene, face_center=None)
    with pytest.raises(trainer.TrainerError, match="face_center"):
        trainer.run(small_config(iterations=1), scene_no_face, analytic_backend(),
                    guidance_cfg(), tmp_path)
