"""Learnable SV-BRDF field: hashed multiresolution encoding + small MLP.

A surface point in the unit cube is encoded by trilinearly interpolating
learned features from L hashed grids of geometrically increasing resolution,
then mapped by a one-hidden-layer MLP (32 units) to diffuse albedo k_d,
roughness and metallic. Specular reflectance follows the Basecolor-Metallic
convention k_s = m*k_d + (1-m)*0.04. Gradients flow to the feature tables and
MLP weights only, never to the query coordinates.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

_HASH_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)

CHECKPOINT_MAGIC = b"SVBF"
CHECKPOINT_VERSION = 1


class FieldError(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldConfig:
    levels: int = 8
    table_size_log2: int = 14
    features: int = 2
    base_resolution: int = 16
    max_resolution: int = 256
    hidden_units: int = 32
    min_roughness: float = 0.08

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    @property
    def feature_dim(self) -> int:
        return self.levels * self.features

    def level_resolutions(self) -> np.ndarray:
        if self.levels == 1:
            return np.array([self.base_resolution])
        growth = np.exp((np.log(self.max_resolution) - np.log(self.base_resolution))
                        / (self.levels - 1))
        res = np.floor(self.base_resolution * growth ** np.arange(self.levels)).astype(int)
        if not np.all(np.diff(res) > 0):
            raise ValueError("level resolutions must be strictly increasing; "
                             "raise max_resolution or lower levels")
        return res


@dataclass
class MaterialBatch:
    """Per-point material samples as live autodiff tensors."""
    kd: ad.Tensor         # (N, 3) in [0, 1]
    roughness: ad.Tensor  # (N,) in [min_roughness, 1]
    metallic: ad.Tensor   # (N,) in [0, 1]
    ks: ad.Tensor         # (N, 3) = m*kd + (1-m)*0.04


def _hash_corners(cells: np.ndarray, table_size: int) -> np.ndarray:
    """Spatial hash of integer grid corners, wrapped to the table size."""
    h = np.zeros(cells.shape[:-1], dtype=np.uint64)
    for axis in range(3):
        h ^= cells[..., axis].astype(np.uint64) * _HASH_PRIMES[axis]
    return (h % np.uint64(table_size)).astype(np.int64)


_CORNER_OFFSETS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)],
                           dtype=np.int64)


def specular_from_metallic(kd: ad.Tensor, metallic: ad.Tensor) -> ad.Tensor:
    """Basecolor-Metallic specular reflectance: m*kd + (1-m)*0.04."""
    m = metallic.reshape((-1, 1))
    return m * kd + (1.0 - m) * 0.04


class MaterialField:
    """Field parameters plus evaluation; mutate parameters only between steps."""

    def __init__(self, config: FieldConfig = FieldConfig(), seed: int = 0,
                 dtype=np.float64):
        self.config = config
        self.dtype = dtype
        self.clamp_events = 0
        rng = np.random.default_rng(seed)
        cfg = config
        params: dict[str, ad.Tensor] = {}
        for lvl in range(cfg.levels):
            params[f"table{lvl}"] = ad.tensor(
                rng.uniform(-1e-4, 1e-4, size=(cfg.table_size, cfg.features)),
                requires_grad=True, dtype=dtype)
        fan_in = cfg.feature_dim
        params["w1"] = ad.tensor(
            rng.uniform(-1, 1, size=(fan_in, cfg.hidden_units)) / np.sqrt(fan_in),
            requires_grad=True, dtype=dtype)
        params["b1"] = ad.tensor(np.zeros(cfg.hidden_units), requires_grad=True, dtype=dtype)
        params["w2"] = ad.tensor(
            rng.uniform(-1, 1, size=(cfg.hidden_units, 5)) / np.sqrt(cfg.hidden_units),
            requires_grad=True, dtype=dtype)
        # neutral start: kd ~ 0.5, roughness mid-range, metallic ~ 0.1
        b2 = np.zeros(5)
        b2[4] = np.log(0.1 / 0.9)
        params["b2"] = ad.tensor(b2, requires_grad=True, dtype=dtype)
        self.params = params

    # -- parameter plumbing ---------------------------------------------------

    def parameter_names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def check_finite(self) -> None:
        for name, p in self.params.items():
            if not np.isfinite(p.data).all():
                raise FieldError(f"non-finite values in field parameter {name!r}")

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise FieldError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.shape:
                raise FieldError(f"parameter {name!r} has shape {arr.shape}, "
                                 f"expected {p.shape}")
            if not np.isfinite(arr).all():
                raise FieldError(f"non-finite values in loaded parameter {name!r}")
            p.data = arr

    # -- evaluation -------------------------------------------------------------

    def encode(self, points: np.ndarray) -> ad.Tensor:
        """Concatenated per-level trilinear feature lookups, (N, levels*features).

        Points outside the unit cube are clamped (counted in clamp_events).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=self.dtype))
        out_of_range = (pts < 0.0) | (pts > 1.0)
        if out_of_range.any():
            self.clamp_events += int(out_of_range.any(axis=1).sum())
            pts = np.clip(pts, 0.0, 1.0)

        cfg = self.config
        level_feats = []
        for lvl, res in enumerate(cfg.level_resolutions()):
            pos = pts * res
            cell = np.clip(np.floor(pos).astype(np.int64), 0, res - 1)
            frac = pos - cell
            corners = cell[:, None, :] + _CORNER_OFFSETS[None, :, :]    # (N, 8, 3)
            idx = _hash_corners(corners, cfg.table_size)                # (N, 8)
            w = np.ones((pts.shape[0], 8), dtype=self.dtype)
            for axis in range(3):
                f = frac[:, axis][:, None]
                w = w * np.where(_CORNER_OFFSETS[:, axis][None, :] == 1, f, 1.0 - f)
            feats = ad.gather(self.params[f"table{lvl}"], idx)          # (N, 8, F)
            level_feats.append((feats * w[:, :, None]).sum(axis=1))     # (N, F)
        return ad.concat(level_feats, axis=-1)

    def eval_material(self, points: np.ndarray) -> MaterialBatch:
        self.check_finite()
        h = ad.relu(ad.matmul(self.encode(points), self.params["w1"]) + self.params["b1"])
        raw = ad.matmul(h, self.params["w2"]) + self.params["b2"]
        kd = ad.sigmoid(raw[:, 0:3])
        r_min = self.config.min_roughness
        roughness = r_min + (1.0 - r_min) * ad.sigmoid(raw[:, 3])
        metallic = ad.sigmoid(raw[:, 4])
        return MaterialBatch(kd=kd, roughness=roughness, metallic=metallic,
                             ks=specular_from_metallic(kd, metallic))

    def eval_kd(self, points: np.ndarray) -> ad.Tensor:
        return self.eval_material(points).kd


def albedo_smoothness(kd_fn, points: np.ndarray, delta: float,
                      rng: np.random.Generator) -> ad.Tensor:
    """Mean L1 difference between k_d at each point and at a jittered copy.

    The jitter is delta * u with u uniform in [-1, 1]^3; both evaluations stay
    differentiable so the penalty smooths the albedo field around the visible
    surface. delta = 0 trivially yields zero.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    u = rng.uniform(-1.0, 1.0, size=pts.shape)
    diff = kd_fn(pts) - kd_fn(pts + delta * u)
    return ad.absolute(diff).sum(axis=1).mean()


# -- checkpoint format ---------------------------------------------------------
#
# Little-endian layout:
#   magic "SVBF" | uint32 version | uint32 json_len | config JSON (utf-8)
#   uint32 tensor_count, then per tensor:
#     uint16 name_len | name utf-8 | uint8 ndim | uint32 dims... | float32 data
# Tensors appear in parameter declaration order.


def save_checkpoint(field: MaterialField, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_json = json.dumps(asdict(field.config)).encode()
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    buf.write(struct.pack("<I", len(field.params)))
    for name, p in field.params.items():
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", p.data.ndim))
        for d in p.shape:
            buf.write(struct.pack("<I", d))
        buf.write(p.data.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, dtype=np.float64) -> MaterialField:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = io.BytesIO(raw)
    if view.read(4) != CHECKPOINT_MAGIC:
        raise FieldError(f"not a field checkpoint: {path}")
    (version,) = struct.unpack("<I", view.read(4))
    if version != CHECKPOINT_VERSION:
        raise FieldError(f"unsupported checkpoint version {version}")
    (json_len,) = struct.unpack("<I", view.read(4))
    config = FieldConfig(**json.loads(view.read(json_len).decode()))
    (count,) = struct.unpack("<I", view.read(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", view.read(2))
        name = view.read(name_len).decode()
        (ndim,) = struct.unpack("<B", view.read(1))
        shape = struct.unpack(f"<{ndim}I", view.read(4 * ndim))
        n_items = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(view.read(4 * n_items), dtype="<f4").reshape(shape)
    field = MaterialField(config, dtype=dtype)
    field.load_arrays(arrays)
    return field
