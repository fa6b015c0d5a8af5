"""The optimization loop: render, guide, backpropagate, update.

Each step samples a camera (the dedicated face camera every `zoom_period`
steps, with the prompt prefixed "the face of "), rasterizes the fixed mesh,
evaluates and shades the material field, then forms the distillation gradient
from a positive prediction on the current render and a negative prediction on
the cached previous render, both sharing the same timestep and noise draw.
The factor is seeded on the noisy render so reverse-mode chains it through
shading and the field; an albedo smoothness penalty is accumulated alongside.

Parameters change only through the optimizer; steps with non-finite gradients
or an unreachable guidance service are skipped with the parameters untouched.
With the analytic backend the whole trajectory is deterministic for a fixed
seed, and interrupted runs resume bitwise-identically from the state file.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import field as mf
from . import geometry as geo
from . import guidance as gd
from . import raster, shading
from .images import write_png
from .remote import GuidanceUnavailable, ProtocolError

ZOOM_PREFIX = "the face of "


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 10000
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    zoom_period: int = 4
    albedo_reg_weight: float = 0.01
    albedo_jitter: float = 0.01
    resolution: tuple[int, int] = (64, 64)
    seed: int = 0
    grad_clip: float | None = 1.0
    checkpoint_every: int = 500
    preview_every: int = 0
    mode: str = "dsd"                     # "dsd" or plain "sds"

    def __post_init__(self):
        if self.iterations < 0:
            raise TrainerError("iterations must be >= 0")
        if self.zoom_period < 1:
            raise TrainerError("zoom period must be >= 1")
        if self.mode not in ("dsd", "sds"):
            raise TrainerError(f"unknown training mode {self.mode!r}")


@dataclass
class Scene:
    mesh: geo.Mesh
    env: shading.PrefilteredEnvironment
    body_cameras: geo.CameraRangeConfig
    face_cameras: geo.CameraRangeConfig
    face_center: np.ndarray | None = None
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)


class AdamW:
    """Decoupled-weight-decay adaptive-moment optimizer over named tensors."""

    def __init__(self, config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.weight_decay = config.weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, ad.Tensor], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            p.data = p.data - self.lr * (update + self.weight_decay * p.data)


@dataclass
class TrainState:
    field: mf.MaterialField
    optimizer: AdamW
    rng: np.random.Generator
    negative_cache: gd.NegativeCache | None = None
    iteration: int = 0
    loss_history: list[dict] = dc_field(default_factory=list)


def render_view(material_field: mf.MaterialField, mesh: geo.Mesh,
                env: shading.PrefilteredEnvironment, camera: geo.Camera,
                background=(0.0, 0.0, 0.0)):
    """Rasterize a camera view and shade it with the current field."""
    gbuf = raster.rasterize(mesh, camera)
    if not gbuf.hit.any():
        return gbuf, None
    points = to_unit_cube(gbuf.hit_points())
    mats = material_field.eval_material(points)
    img = shading.shade(gbuf, mats, env, camera, background)
    return gbuf, img


def to_unit_cube(points: np.ndarray) -> np.ndarray:
    """Affine wrap of unit-sphere scene coordinates into the field's domain."""
    return (np.asarray(points) + 1.0) * 0.5


def is_zoom_step(iteration: int, period: int) -> bool:
    return iteration % period == 0


def prompt_for_step(prompt: str, zoom: bool) -> str:
    return ZOOM_PREFIX + prompt if zoom else prompt


def _sample_step_camera(state: TrainState, scene: Scene, config: TrainConfig):
    zoom = is_zoom_step(state.iteration, config.zoom_period)
    if zoom:
        cam = geo.sample_face_camera(state.rng, scene.face_center, scene.face_cameras)
    else:
        cam = geo.sample_body_camera(state.rng, scene.body_cameras, scene.mesh.centroid)
    return cam, zoom


def train_step(state: TrainState, scene: Scene, backend, guidance_cfg: gd.GuidanceConfig,
               config: TrainConfig, embeddings: dict) -> dict:
    """One optimization step; returns diagnostics and advances the state."""
    camera, zoom = _sample_step_camera(state, scene, config)
    step_prompt = prompt_for_step(guidance_cfg.prompt, zoom)

    gbuf, img = render_view(state.field, scene.mesh, scene.env, camera, scene.background)
    diag = {"step": state.iteration, "camera": "face" if zoom else "body",
            "prompt": step_prompt, "skipped": False, "event": ""}
    if img is None:
        state.iteration += 1
        diag.update(skipped=True, event="empty view")
        state.loss_history.append(diag)
        return diag

    z_image = img.image()
    depth = raster.depth_map(gbuf) if guidance_cfg.depth_conditioning else None
    if state.negative_cache is None:
        state.negative_cache = gd.NegativeCache(latent=z_image, depth=depth,
                                                iteration=state.iteration - 1)

    t = float(state.rng.uniform(*guidance_cfg.t_range))
    eps = state.rng.standard_normal(z_image.shape)
    w_t = gd.weight_for(t, backend.schedule, guidance_cfg.w_mode)
    a_t = backend.schedule.alpha_bar(t)

    skipped_reason = None
    try:
        pos_embed = _embed_cached(backend, step_prompt, embeddings)
        neg_embed = _embed_cached(backend, guidance_cfg.negative_prompt, embeddings)
        z_t = np.sqrt(a_t) * z_image + np.sqrt(1.0 - a_t) * eps
        pred_pos = backend.predict(z_t, pos_embed, t, depth, guidance_cfg.omega)
        if config.mode == "dsd":
            cache = state.negative_cache
            z_t_neg = np.sqrt(a_t) * cache.latent + np.sqrt(1.0 - a_t) * eps
            pred_neg = backend.predict(z_t_neg, neg_embed, t, cache.depth,
                                       guidance_cfg.omega)
            grad_factor = gd.dsd_gradient(pred_pos, pred_neg, eps, guidance_cfg.lam, w_t)
            diag["dsd_loss"] = gd.dsd_loss_from_predictions(
                pred_pos, pred_neg, eps, guidance_cfg.lam, w_t)
        else:
            grad_factor = gd.sds_gradient(pred_pos, eps, w_t)
            diag["dsd_loss"] = gd.dsd_loss_from_predictions(pred_pos, pred_pos, eps,
                                                            0.0, w_t)
    except (GuidanceUnavailable, ProtocolError) as exc:
        skipped_reason = f"guidance: {exc}"

    if skipped_reason is None:
        state.field.zero_grad()
        # chain the factor through z_t = sqrt(a) z + sqrt(1-a) eps on the
        # foreground rows; the negative branch stays detached
        z_t_fore = gd.add_noise(img.foreground, eps[gbuf.hit], t, backend.schedule)
        ad.backward(z_t_fore, seed=grad_factor[gbuf.hit])

        if config.albedo_reg_weight > 0.0:
            points = to_unit_cube(gbuf.hit_points())
            reg = mf.albedo_smoothness(lambda p: state.field.eval_material(p).kd,
                                       points, config.albedo_jitter, state.rng)
            ad.backward(reg * config.albedo_reg_weight)
            diag["albedo_reg"] = float(reg.data)

        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for name, p in state.field.params.items()}
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        diag["grad_norm"] = norm
        if not np.isfinite(norm):
            skipped_reason = "non-finite gradient"
        else:
            if config.grad_clip is not None and norm > config.grad_clip:
                scale = config.grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
            state.optimizer.step(state.field.params, grads)

    if skipped_reason is not None:
        diag.update(skipped=True, event=skipped_reason)

    # cache the render produced this step for the next iteration's negative pair
    state.negative_cache = gd.NegativeCache(latent=z_image, depth=depth,
                                            iteration=state.iteration)
    diag["t"] = t
    state.iteration += 1
    state.loss_history.append(diag)
    return diag


def _embed_cached(backend, prompt: str, cache: dict):
    if prompt not in cache:
        cache[prompt] = backend.embed(prompt)
    return cache[prompt]


# -- full runs ------------------------------------------------------------------

def init_state(config: TrainConfig, field_config: mf.FieldConfig | None = None) -> TrainState:
    f = mf.MaterialField(field_config or mf.FieldConfig(), seed=config.seed)
    return TrainState(field=f, optimizer=AdamW(config),
                      rng=np.random.default_rng(config.seed))


def run(config: TrainConfig, scene: Scene, backend, guidance_cfg: gd.GuidanceConfig,
        out_dir, field_config: mf.FieldConfig | None = None,
        resume_from=None) -> dict:
    """Train for config.iterations; writes checkpoints, diagnostics, previews."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if scene.face_center is None and config.iterations > 0:
        raise TrainerError("semantic zoom needs a face_center annotation; set one "
                           "in the scene config")

    if resume_from is not None:
        state = load_state(resume_from, field_config or mf.FieldConfig(), config)
    else:
        state = init_state(config, field_config)
        # seed the negative pair with the untextured initial render
        cam = geo.sample_body_camera(state.rng, scene.body_cameras, scene.mesh.centroid)
        gbuf, img = render_view(state.field, scene.mesh, scene.env, cam, scene.background)
        if img is not None:
            depth = raster.depth_map(gbuf) if guidance_cfg.depth_conditioning else None
            state.negative_cache = gd.NegativeCache(latent=img.image(), depth=depth,
                                                    iteration=-1)

    embeddings: dict = {}
    diag_path = out_dir / "diagnostics.ndjson"
    started = time.time()
    with open(diag_path, "a") as diag_file:
        while state.iteration < config.iterations:
            diag = train_step(state, scene, backend, guidance_cfg, config, embeddings)
            diag_file.write(json.dumps(diag) + "\n")
            i = state.iteration
            if config.checkpoint_every and i % config.checkpoint_every == 0:
                save_state(state, out_dir / "train_state.npz")
            if config.preview_every and i % config.preview_every == 0:
                _write_preview(state, scene, out_dir / f"preview_{i:06d}.png")

    mf.save_checkpoint(state.field, out_dir / "field.svbf")
    save_state(state, out_dir / "train_state.npz")
    _write_preview(state, scene, out_dir / "preview_final.png")
    report = {
        "iterations": state.iteration,
        "skipped_steps": sum(1 for d in state.loss_history if d.get("skipped")),
        "wall_time_s": time.time() - started,
        "backend": getattr(backend, "name", "unknown"),
        "checkpoint": str(out_dir / "field.svbf"),
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    return report


def _write_preview(state: TrainState, scene: Scene, path: Path) -> None:
    body = scene.body_cameras
    cam = geo.Camera(radius=body.radius,
                     elevation=float(np.mean(body.elevation_range)),
                     azimuth=float(np.mean(body.azimuth_range)),
                     look_at=scene.mesh.centroid, fov_y=body.fov_y,
                     resolution=body.resolution)
    _, img = render_view(state.field, scene.mesh, scene.env, cam, scene.background)
    if img is not None:
        write_png(path, img.image(), srgb=True)


# -- resumable state ----------------------------------------------------------------

def save_state(state: TrainState, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in state.field.params.items():
        arrays[f"param__{name}"] = p.data
    for name, m in state.optimizer.m.items():
        arrays[f"adam_m__{name}"] = m
        arrays[f"adam_v__{name}"] = state.optimizer.v[name]
    if state.negative_cache is not None:
        arrays["cache_latent"] = state.negative_cache.latent
        if state.negative_cache.depth is not None:
            arrays["cache_depth"] = state.negative_cache.depth
    meta = {
        "iteration": state.iteration,
        "adam_step": state.optimizer.step_count,
        "cache_iteration": (state.negative_cache.iteration
                            if state.negative_cache is not None else None),
        "rng_state": state.rng.bit_generator.state,
    }
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_state(path, field_config: mf.FieldConfig, config: TrainConfig) -> TrainState:
    data = np.load(path)
    meta = json.loads(bytes(data["meta_json"]).decode())
    f = mf.MaterialField(field_config, seed=config.seed)
    f.load_arrays({name.removeprefix("param__"): data[name]
                   for name in data.files if name.startswith("param__")})
    opt = AdamW(config)
    opt.step_count = meta["adam_step"]
    for name in data.files:
        if name.startswith("adam_m__"):
            opt.m[name.removeprefix("adam_m__")] = data[name]
        elif name.startswith("adam_v__"):
            opt.v[name.removeprefix("adam_v__")] = data[name]
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    cache = None
    if "cache_latent" in data.files:
        cache = gd.NegativeCache(
            latent=data["cache_latent"],
            depth=data["cache_depth"] if "cache_depth" in data.files else None,
            iteration=meta["cache_iteration"])
    return TrainState(field=f, optimizer=opt, rng=rng, negative_cache=cache,
                      iteration=meta["iteration"])
