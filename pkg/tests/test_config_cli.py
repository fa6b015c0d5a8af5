import numpy as np
import pytest

from texdistill import cli, geometry as geo, primitives as prim
from texdistill.config import ConfigError, parse_config, serialize_config
from texdistill.images import read_png


@pytest.fixture
def mesh_path(tmp_path):
    path = tmp_path / "mannequin.obj"
    geo.save_obj(prim.make_mannequin(), path)
    return path


def smoke_yaml(mesh_path, out_dir, iterations=5, seed=0):
    return f"""
version: 1
mesh:
  path: {mesh_path}
  face_center: [0.0, 0.58, 0.11]
prompt: a test mannequin
negative_prompts: [disfigured, ugly]
backend:
  kind: analytic
  targets:
    default: {{color: [0.7, 0.3, 0.2], var: 0.0}}
guidance:
  lambda: 0.5
  omega: 0.0
render:
  resolution: [32, 32]
  environment: {{kind: constant, size: 16}}
  prefilter_samples: 128
  irradiance_size: 4
train:
  iterations: {iterations}
  seed: {seed}
  checkpoint_every: 0
  preview_every: 0
output_dir: {out_dir}
"""


@pytest.fixture
def config_path(tmp_path, mesh_path):
    p = tmp_path / "run.yaml"
    p.write_text(smoke_yaml(mesh_path, tmp_path / "out"))
    return p


# -- config --------------------------------------------------------------------------

def test_config_roundtrip_semantically_identical(config_path):
    config = parse_config(config_path)
    reparsed = parse_config(serialize_config(config))
    assert reparsed == config


def test_config_missing_mesh_path_names_field(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("prompt: hi\nmesh: {}\n")
    with pytest.raises(ConfigError, match="mesh.path"):
        parse_config(p)


def test_config_unknown_field_named(tmp_path, mesh_path):
    p = tmp_path / "bad.yaml"
    p.write_text(smoke_yaml(mesh_path, tmp_path) + "\nbogus_section: 1\n")
    with pytest.raises(ConfigError, match="bogus_section"):
        parse_config(p)


def test_config_remote_requires_endpoint(mesh_path):
    cfg = {"mesh": {"path": str(mesh_path)}, "prompt": "x",
           "backend": {"kind": "remote"}}
    with pytest.raises(ConfigError, match="backend.endpoint"):
        parse_config(cfg)


def test_config_bad_lambda_reported(mesh_path):
    cfg = {"mesh": {"path": str(mesh_path)}, "prompt": "x",
           "guidance": {"lambda": 1.5}}
    with pytest.raises(ConfigError, match="guidance"):
        parse_config(cfg)


def test_config_missing_prompt(mesh_path):
    with pytest.raises(ConfigError, match="prompt"):
        parse_config({"mesh": {"path": str(mesh_path)}})


# -- cli -----------------------------------------------------------------------------

def test_validate_config_ok(config_path, capsys):
    assert cli.main(["validate-config", "--config", str(config_path)]) == 0
    assert "config ok" in capsys.readouterr().out


def test_validate_config_bad_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("prompt: hi\n")
    assert cli.main(["validate-config", "--config", str(p)]) == 2
    assert "mesh.path" in capsys.readouterr().err


def test_train_smoke_writes_outputs(config_path, tmp_path, capsys):
    code = cli.main(["train", "--config", str(config_path), "--iterations", "10"])
    assert code == 0
    out = tmp_path / "out"
    assert (out / "field.svbf").exists()
    assert (out / "preview_final.png").exists()
    assert (out / "diagnostics.ndjson").exists()
    assert (out / "run_config.yaml").exists()
    img = read_png(out / "preview_final.png")
    assert img.shape == (32, 32, 3)


def test_train_seed_determinism_by_checksum(tmp_path, mesh_path):
    blobs = []
    for name in ("r1", "r2"):
        cfg = tmp_path / f"{name}.yaml"
        cfg.write_text(smoke_yaml(mesh_path, tmp_path / name, iterations=4, seed=11))
        assert cli.main(["train", "--config", str(cfg)]) == 0
        blobs.append((tmp_path / name / "field.svbf").read_bytes())
    assert blobs[0] == blobs[1]


def test_bake_cli_smoke(config_path, tmp_path, mesh_path):
    assert cli.main(["train", "--config", str(config_path), "--iterations", "1"]) == 0
    out = tmp_path / "bake"
    code = cli.main(["bake", "--checkpoint", str(tmp_path / "out" / "field.svbf"),
                     "--mesh", str(mesh_path), "--resolution", "32",
                     "--output-dir", str(out)])
    assert code == 0
    for name in ("kd", "roughness", "metallic", "ks"):
        assert (out / f"{name}.png").exists()


def test_turntable_cli_smoke(config_path, tmp_path):
    assert cli.main(["train", "--config", str(config_path), "--iterations", "0"]) == 0
    out = tmp_path / "turn"
    code = cli.main(["turntable", "--checkpoint", str(tmp_path / "out" / "field.svbf"),
                     "--config", str(config_path), "--n-poses", "3",
                     "--output-dir", str(out)])
    assert code == 0
    assert sorted(p.name for p in out.glob("turn_*.png")) == \
        ["turn_0000.png", "turn_0001.png", "turn_0002.png"]
