"""Command-line entry points: train, bake, turntable, validate-config."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bake as bake_mod
from . import field as mf
from . import geometry as geo
from . import guidance as gd
from . import shading, trainer
from .config import ConfigError, RunConfig, parse_config, serialize_config
from .remote import GuidanceUnavailable, RemoteBackend

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def build_environment(config: RunConfig) -> shading.PrefilteredEnvironment:
    env_cfg = config.render.environment
    if env_cfg.kind == "constant":
        env = shading.EnvironmentLight.constant(env_cfg.radiance, env_cfg.size)
    else:
        env = shading.EnvironmentLight.from_files(env_cfg.faces)
    return shading.prefilter(env, n_mips=config.render.n_mips,
                             min_roughness=config.field.min_roughness,
                             lut_size=config.render.lut_size,
                             n_samples=config.render.prefilter_samples,
                             irradiance_size=config.render.irradiance_size)


def build_backend(config: RunConfig):
    if config.backend.kind == "remote":
        return RemoteBackend(config.backend.endpoint, timeout=config.backend.timeout_s,
                             depth_required=config.guidance.depth_conditioning)
    schedule = config.noise_schedule()
    targets = {}
    default = None
    for prompt, spec in config.backend.targets.items():
        gauss = gd.GaussianSpec(tuple(spec.get("color", (0.5, 0.5, 0.5))),
                                float(spec.get("var", 0.0)))
        if prompt == "default":
            default = gauss
        else:
            targets[prompt] = gauss
    return gd.AnalyticBackend(gd.AnalyticDenoiser(schedule, targets, default))


def build_scene(config: RunConfig) -> trainer.Scene:
    mesh = geo.load_mesh(config.mesh.path, face_center=config.mesh.face_center,
                         normalize=config.mesh.normalize)
    return trainer.Scene(
        mesh=mesh,
        env=build_environment(config),
        body_cameras=config.body_camera_config(),
        face_cameras=config.face_camera_config(),
        face_center=mesh.face_center,
        background=config.render.background)


def _load_config(args) -> RunConfig:
    config = parse_config(args.config)
    for name, target in [("iterations", "train.iterations"), ("seed", "train.seed"),
                         ("output_dir", "output_dir")]:
        value = getattr(args, name, None)
        if value is not None:
            obj = config
            *parents, leaf = target.split(".")
            for p in parents:
                obj = getattr(obj, p)
            setattr(obj, leaf, value)
    return config


def cmd_train(args) -> int:
    config = _load_config(args)
    scene = build_scene(config)
    backend = build_backend(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.yaml").write_text(serialize_config(config))
    report = trainer.run(config.train, scene, backend, config.guidance, out_dir,
                         field_config=config.field, resume_from=args.resume)
    print(f"trained {report['iterations']} iterations "
          f"({report['skipped_steps']} skipped) -> {report['checkpoint']}")
    return EXIT_OK


def cmd_bake(args) -> int:
    field = mf.load_checkpoint(args.checkpoint)
    mesh = geo.load_mesh(args.mesh)
    out_dir = Path(args.output_dir)
    if mesh.uvs is None:
        if not args.per_vertex_fallback:
            print("error: mesh has no UVs; pass --per-vertex-fallback for a "
                  "vertex-table bake", file=sys.stderr)
            return EXIT_ERROR
        out_dir.mkdir(parents=True, exist_ok=True)
        path = bake_mod.bake_per_vertex(field, mesh, out_dir / "materials_per_vertex.npz")
        print(f"baked per-vertex materials -> {path}")
        return EXIT_OK
    result = bake_mod.bake_textures(field, mesh, args.resolution)
    paths = bake_mod.write_bake(result, out_dir)
    print("baked textures -> " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_turntable(args) -> int:
    config = parse_config(args.config) if args.config else None
    field = mf.load_checkpoint(args.checkpoint)
    if config is not None:
        mesh = geo.load_mesh(config.mesh.path, face_center=config.mesh.face_center,
                             normalize=config.mesh.normalize)
        env = build_environment(config)
        body = config.body_camera_config()
        background = config.render.background
    else:
        mesh = geo.load_mesh(args.mesh)
        env = shading.prefilter(shading.EnvironmentLight.constant(1.0, 32))
        body = geo.body_camera_config(resolution=(args.resolution, args.resolution))
        background = (0.0, 0.0, 0.0)
    paths = bake_mod.render_turntable(field, mesh, env, args.n_poses,
                                      args.output_dir, body, background)
    print(f"rendered {len(paths)} poses -> {args.output_dir}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    config = parse_config(args.config)
    print(f"config ok: prompt={config.prompt!r}, mesh={config.mesh.path}, "
          f"backend={config.backend.kind}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texdistill",
        description="Optimize an SV-BRDF texture field on a fixed mesh from a "
                    "text prompt via score distillation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the optimization loop")
    p_train.add_argument("--config", required=True, help="YAML run config")
    p_train.add_argument("--iterations", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--output-dir", dest="output_dir", default=None)
    p_train.add_argument("--resume", default=None, help="train_state.npz to resume from")
    p_train.set_defaults(fn=cmd_train)

    p_bake = sub.add_parser("bake", help="bake material textures from a checkpoint")
    p_bake.add_argument("--checkpoint", required=True)
    p_bake.add_argument("--mesh", required=True)
    p_bake.add_argument("--resolution", type=int, default=256)
    p_bake.add_argument("--output-dir", dest="output_dir", required=True)
    p_bake.add_argument("--per-vertex-fallback", action="store_true")
    p_bake.set_defaults(fn=cmd_bake)

    p_turn = sub.add_parser("turntable", help="render an azimuth ring of poses")
    p_turn.add_argument("--checkpoint", required=True)
    p_turn.add_argument("--mesh", default=None)
    p_turn.add_argument("--config", default=None,
                        help="optional run config for env/camera settings")
    p_turn.add_argument("--n-poses", dest="n_poses", type=int, default=100)
    p_turn.add_argument("--resolution", type=int, default=64)
    p_turn.add_argument("--output-dir", dest="output_dir", required=True)
    p_turn.set_defaults(fn=cmd_turntable)

    p_val = sub.add_parser("validate-config", help="parse and validate a run config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(fn=cmd_validate_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "turntable" and not (args.mesh or args.config):
        parser.error("turntable requires --mesh or --config")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (geo.MeshError, mf.FieldError, trainer.TrainerError, bake_mod.BakeError,
            GuidanceUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
