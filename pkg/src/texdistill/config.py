"""Run configuration: one YAML file capturing every knob of a run.

The schema is versioned and flat enough to diff; `parse_config` validates
eagerly and reports the offending field path. `serialize_config` inverts
`parse_config` field-by-field so configs round-trip.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field as dc_field, fields as dc_fields
from pathlib import Path

import numpy as np
import yaml

from .field import FieldConfig
from .geometry import (BODY_AZIMUTH, BODY_ELEVATION, BODY_RADIUS, FACE_AZIMUTH,
                       FACE_ELEVATION, FACE_RADIUS, CameraRangeConfig)
from .guidance import GuidanceConfig, GuidanceConfigError, NoiseSchedule
from .trainer import TrainConfig, TrainerError

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


@dataclass
class MeshSection:
    path: str = ""
    face_center: tuple[float, float, float] | None = None
    normalize: bool = True


@dataclass
class BackendSection:
    kind: str = "analytic"               # analytic | remote
    endpoint: str | None = None
    timeout_s: float = 30.0
    # analytic backend: prompt -> {color, var}; "default" is the fallback
    targets: dict = dc_field(default_factory=lambda: {
        "default": {"color": (0.5, 0.5, 0.5), "var": 0.0}})


@dataclass
class EnvironmentSection:
    kind: str = "constant"               # constant | cubemap
    radiance: tuple[float, float, float] = (1.0, 1.0, 1.0)
    size: int = 32
    faces: tuple[str, ...] | None = None  # six files for kind=cubemap


@dataclass
class RenderSection:
    resolution: tuple[int, int] = (64, 64)
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    environment: EnvironmentSection = dc_field(default_factory=EnvironmentSection)
    n_mips: int = 5
    lut_size: int = 64
    prefilter_samples: int = 1024
    irradiance_size: int = 8


@dataclass
class CameraSection:
    body_radius: float = BODY_RADIUS
    body_elevation: tuple[float, float] = BODY_ELEVATION
    body_azimuth: tuple[float, float] = BODY_AZIMUTH
    face_radius: float = FACE_RADIUS
    face_elevation: tuple[float, float] = FACE_ELEVATION
    face_azimuth: tuple[float, float] = FACE_AZIMUTH
    fov_y: float = float(np.pi / 4.0)


@dataclass
class ScheduleSection:
    family: str = "scaled_linear"
    num_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012


@dataclass
class RunConfig:
    mesh: MeshSection
    prompt: str
    negative_prompts: tuple[str, ...] = ("disfigured", "ugly")
    backend: BackendSection = dc_field(default_factory=BackendSection)
    guidance: GuidanceConfig = dc_field(default_factory=GuidanceConfig)
    schedule: ScheduleSection = dc_field(default_factory=ScheduleSection)
    field: FieldConfig = dc_field(default_factory=FieldConfig)
    cameras: CameraSection = dc_field(default_factory=CameraSection)
    render: RenderSection = dc_field(default_factory=RenderSection)
    train: TrainConfig = dc_field(default_factory=TrainConfig)
    output_dir: str = "out"

    def body_camera_config(self) -> CameraRangeConfig:
        c = self.cameras
        return CameraRangeConfig(c.body_radius, c.body_elevation, c.body_azimuth,
                                 c.fov_y, self.render.resolution)

    def face_camera_config(self) -> CameraRangeConfig:
        c = self.cameras
        return CameraRangeConfig(c.face_radius, c.face_elevation, c.face_azimuth,
                                 c.fov_y, self.render.resolution)

    def noise_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return NoiseSchedule(s.family, s.num_steps, s.beta_start, s.beta_end)


def _tuple_or_none(value, n, path, kind=float):
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"{path}: expected a {n}-element list")
    try:
        return tuple(kind(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _take(section: dict, path: str, known: set[str]) -> None:
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")


def parse_config(source: str | Path | dict, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate; `source` is a YAML path, YAML text, or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        if path.exists():
            raw = yaml.safe_load(path.read_text())
            base_dir = base_dir or path.parent
        else:
            raw = yaml.safe_load(str(source))
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at top level")
    if raw.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {raw.get('version')}")

    known = {"version", "mesh", "prompt", "negative_prompts", "backend", "guidance",
             "schedule", "field", "cameras", "render", "train", "output_dir"}
    _take(raw, "config", known)

    mesh_raw = raw.get("mesh") or {}
    _take(mesh_raw, "mesh", {"path", "face_center", "normalize"})
    mesh_path = mesh_raw.get("path")
    if not mesh_path:
        raise ConfigError("mesh.path: required field is missing")
    if base_dir is not None and not Path(mesh_path).is_absolute():
        mesh_path = str(base_dir / mesh_path)
    if not Path(mesh_path).is_file():
        raise ConfigError(f"mesh.path: file not found: {mesh_path}")
    mesh = MeshSection(
        path=str(mesh_path),
        face_center=_tuple_or_none(mesh_raw.get("face_center"), 3, "mesh.face_center"),
        normalize=bool(mesh_raw.get("normalize", True)))

    prompt = raw.get("prompt", "")
    if not prompt or not isinstance(prompt, str):
        raise ConfigError("prompt: a nonempty prompt string is required")

    negative = tuple(raw.get("negative_prompts", ("disfigured", "ugly")))

    backend_raw = raw.get("backend") or {}
    _take(backend_raw, "backend", {"kind", "endpoint", "timeout_s", "targets"})
    backend = BackendSection(
        kind=backend_raw.get("kind", "analytic"),
        endpoint=backend_raw.get("endpoint"),
        timeout_s=float(backend_raw.get("timeout_s", 30.0)),
        targets=backend_raw.get("targets") or BackendSection().targets)
    if backend.kind not in ("analytic", "remote"):
        raise ConfigError(f"backend.kind: must be analytic or remote, got {backend.kind!r}")
    if backend.kind == "remote" and not backend.endpoint:
        raise ConfigError("backend.endpoint: required for the remote backend")

    guidance_raw = raw.get("guidance") or {}
    _take(guidance_raw, "guidance",
          {"lambda", "omega", "t_range", "w_mode", "depth_conditioning"})
    try:
        guidance = GuidanceConfig(
            lam=float(guidance_raw.get("lambda", 0.5)),
            omega=float(guidance_raw.get("omega", 7.5)),
            t_range=_tuple_or_none(guidance_raw.get("t_range", (0.02, 0.98)), 2,
                                   "guidance.t_range"),
            w_mode=guidance_raw.get("w_mode", "one"),
            prompt=prompt,
            negative_prompts=negative,
            depth_conditioning=bool(guidance_raw.get("depth_conditioning", True)))
    except GuidanceConfigError as exc:
        raise ConfigError(f"guidance: {exc}") from exc

    schedule_raw = raw.get("schedule") or {}
    _take(schedule_raw, "schedule", {"family", "num_steps", "beta_start", "beta_end"})
    schedule = ScheduleSection(
        family=schedule_raw.get("family", "scaled_linear"),
        num_steps=int(schedule_raw.get("num_steps", 1000)),
        beta_start=float(schedule_raw.get("beta_start", 0.00085)),
        beta_end=float(schedule_raw.get("beta_end", 0.012)))

    field_raw = raw.get("field") or {}
    _take(field_raw, "field", {f.name for f in dc_fields(FieldConfig)})
    try:
        field_cfg = FieldConfig(**field_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field: {exc}") from exc

    cam_raw = raw.get("cameras") or {}
    _take(cam_raw, "cameras", {"body_radius", "body_elevation", "body_azimuth",
                               "face_radius", "face_elevation", "face_azimuth", "fov_y"})
    defaults = CameraSection()
    cameras = CameraSection(
        body_radius=float(cam_raw.get("body_radius", defaults.body_radius)),
        body_elevation=_tuple_or_none(cam_raw.get("body_elevation",
                                                  defaults.body_elevation), 2,
                                      "cameras.body_elevation"),
        body_azimuth=_tuple_or_none(cam_raw.get("body_azimuth",
                                                defaults.body_azimuth), 2,
                                    "cameras.body_azimuth"),
        face_radius=float(cam_raw.get("face_radius", defaults.face_radius)),
        face_elevation=_tuple_or_none(cam_raw.get("face_elevation",
                                                  defaults.face_elevation), 2,
                                      "cameras.face_elevation"),
        face_azimuth=_tuple_or_none(cam_raw.get("face_azimuth",
                                                defaults.face_azimuth), 2,
                                    "cameras.face_azimuth"),
        fov_y=float(cam_raw.get("fov_y", defaults.fov_y)))

    render_raw = raw.get("render") or {}
    _take(render_raw, "render", {"resolution", "background", "environment", "n_mips",
                                 "lut_size", "prefilter_samples", "irradiance_size"})
    env_raw = render_raw.get("environment") or {}
    _take(env_raw, "render.environment", {"kind", "radiance", "size", "faces"})
    env = EnvironmentSection(
        kind=env_raw.get("kind", "constant"),
        radiance=_tuple_or_none(env_raw.get("radiance", (1.0, 1.0, 1.0)), 3,
                                "render.environment.radiance"),
        size=int(env_raw.get("size", 32)),
        faces=tuple(env_raw["faces"]) if env_raw.get("faces") else None)
    if env.kind not in ("constant", "cubemap"):
        raise ConfigError(f"render.environment.kind: unknown kind {env.kind!r}")
    if env.kind == "cubemap" and (env.faces is None or len(env.faces) != 6):
        raise ConfigError("render.environment.faces: six face files are required")
    render = RenderSection(
        resolution=_tuple_or_none(render_raw.get("resolution", (64, 64)), 2,
                                  "render.resolution", int),
        background=_tuple_or_none(render_raw.get("background", (0.0, 0.0, 0.0)), 3,
                                  "render.background"),
        environment=env,
        n_mips=int(render_raw.get("n_mips", 5)),
        lut_size=int(render_raw.get("lut_size", 64)),
        prefilter_samples=int(render_raw.get("prefilter_samples", 1024)),
        irradiance_size=int(render_raw.get("irradiance_size", 8)))

    train_raw = dict(raw.get("train") or {})
    _take(train_raw, "train", {f.name for f in dc_fields(TrainConfig)})
    if "resolution" in train_raw:
        train_raw["resolution"] = _tuple_or_none(train_raw["resolution"], 2,
                                                 "train.resolution", int)
    else:
        train_raw["resolution"] = render.resolution
    try:
        train = TrainConfig(**train_raw)
    except (TrainerError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    return RunConfig(mesh=mesh, prompt=prompt, negative_prompts=negative,
                     backend=backend, guidance=guidance, schedule=schedule,
                     field=field_cfg, cameras=cameras, render=render, train=train,
                     output_dir=str(raw.get("output_dir", "out")))


def serialize_config(config: RunConfig) -> str:
    def clean(value):
        if isinstance(value, tuple):
            return [clean(v) for v in value]
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (np.floating, np.integer)):
            return value.item()
        return value

    data = {
        "version": CONFIG_VERSION,
        "mesh": clean(asdict(config.mesh)),
        "prompt": config.prompt,
        "negative_prompts": clean(config.negative_prompts),
        "backend": clean(asdict(config.backend)),
        "guidance": {
            "lambda": config.guidance.lam,
            "omega": config.guidance.omega,
            "t_range": clean(config.guidance.t_range),
            "w_mode": config.guidance.w_mode,
            "depth_conditioning": config.guidance.depth_conditioning,
        },
        "schedule": clean(asdict(config.schedule)),
        "field": clean(asdict(config.field)),
        "cameras": clean(asdict(config.cameras)),
        "render": clean(asdict(config.render)),
        "train": clean(asdict(config.train)),
        "output_dir": config.output_dir,
    }
    return yaml.safe_dump(data, sort_keys=False)
