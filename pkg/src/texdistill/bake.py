"""Texture baking over the UV chart and turntable rendering.

Baking rasterizes each triangle in UV space (orthographic edge-function
fill), interpolates the 3-D surface point per covered texel, evaluates the
material field there, and writes the channels as PNGs: sRGB for diffuse
albedo, linear single-channel for roughness and metallic, linear RGB for the
derived specular reflectance. Texel (row, col) covers
uv = ([col, col+1], [row, row+1]) / resolution. Meshes without UVs fall back
to a per-vertex bake stored as an .npz table.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .field import MaterialField
from .images import write_png
from .trainer import render_view


class BakeError(RuntimeError):
    pass


@dataclass
class BakeResult:
    kd: np.ndarray          # (R, R, 3) linear
    roughness: np.ndarray   # (R, R)
    metallic: np.ndarray    # (R, R)
    ks: np.ndarray          # (R, R, 3) linear
    positions: np.ndarray   # (R, R, 3) surface point per texel
    valid: np.ndarray       # (R, R) texel covered by the UV chart


def uv_surface_points(mesh: geo.Mesh, resolution: int):
    """Map every texel center through the UV chart to its 3-D surface point."""
    if mesh.uvs is None or mesh.face_uvs is None:
        raise BakeError("mesh has no UV coordinates")
    positions = np.zeros((resolution, resolution, 3))
    valid = np.zeros((resolution, resolution), dtype=bool)
    uv_scaled = mesh.uvs * resolution
    for f in range(len(mesh.faces)):
        tri3d = mesh.vertices[mesh.faces[f]]
        uv = uv_scaled[mesh.face_uvs[f]]
        (ax, ay), (bx, by), (cx, cy) = uv
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        x0 = max(int(np.floor(min(ax, bx, cx) - 0.5)), 0)
        x1 = min(int(np.ceil(max(ax, bx, cx) + 0.5)), resolution - 1)
        y0 = max(int(np.floor(min(ay, by, cy) - 0.5)), 0)
        y1 = min(int(np.ceil(max(ay, by, cy) + 0.5)), resolution - 1)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5)
        l0 = ((bx - ax) * (gy - ay) - (by - ay) * (gx - ax)) / area
        l1 = ((cx - bx) * (gy - by) - (cy - by) * (gx - bx)) / area
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        lam = np.stack([l1, l2, l0], axis=-1)      # weights of corners a, b, c
        pos = lam @ tri3d
        region = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        positions[region] = np.where(inside[..., None], pos, positions[region])
        valid[region] |= inside
    return positions, valid


def bake_textures(field: MaterialField, mesh: geo.Mesh, resolution: int = 256) -> BakeResult:
    positions, valid = uv_surface_points(mesh, resolution)
    out = BakeResult(
        kd=np.zeros((resolution, resolution, 3)),
        roughness=np.zeros((resolution, resolution)),
        metallic=np.zeros((resolution, resolution)),
        ks=np.full((resolution, resolution, 3), 0.0),
        positions=positions, valid=valid)
    if valid.any():
        points = (positions[valid] + 1.0) * 0.5   # unit-sphere scene -> unit cube
        mats = field.eval_material(points)
        out.kd[valid] = mats.kd.data
        out.roughness[valid] = mats.roughness.data
        out.metallic[valid] = mats.metallic.data
        out.ks[valid] = mats.ks.data
    return out


def write_bake(result: BakeResult, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "kd": out_dir / "kd.png",
        "roughness": out_dir / "roughness.png",
        "metallic": out_dir / "metallic.png",
        "ks": out_dir / "ks.png",
    }
    write_png(paths["kd"], result.kd, srgb=True)
    write_png(paths["roughness"], result.roughness)
    write_png(paths["metallic"], result.metallic)
    write_png(paths["ks"], result.ks)
    return paths


def bake_per_vertex(field: MaterialField, mesh: geo.Mesh, out_path: str | Path) -> Path:
    """Fallback for meshes without UVs: one material row per vertex."""
    points = (mesh.vertices + 1.0) * 0.5
    mats = field.eval_material(points)
    out_path = Path(out_path)
    np.savez(out_path, positions=mesh.vertices, kd=mats.kd.data,
             roughness=mats.roughness.data, metallic=mats.metallic.data,
             ks=mats.ks.data)
    return out_path


def turntable_cameras(mesh: geo.Mesh, n_poses: int,
                      body: geo.CameraRangeConfig) -> list[geo.Camera]:
    """n_poses cameras on a fixed-elevation azimuth ring at the body radius."""
    elevation = float(np.mean(body.elevation_range))
    return [geo.Camera(radius=body.radius, elevation=elevation,
                       azimuth=2.0 * np.pi * k / n_poses,
                       look_at=mesh.centroid, fov_y=body.fov_y,
                       resolution=body.resolution)
            for k in range(n_poses)]


def render_turntable(field: MaterialField, mesh: geo.Mesh, env, n_poses: int,
                     out_dir: str | Path, body: geo.CameraRangeConfig,
                     background=(0.0, 0.0, 0.0), max_workers: int = 4) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cameras = turntable_cameras(mesh, n_poses, body)

    def render_frame(k: int) -> Path:
        _, img = render_view(field, mesh, env, cameras[k], background)
        path = out_dir / f"turn_{k:04d}.png"
        if img is None:
            write_png(path, np.broadcast_to(background, (*body.resolution, 3)), srgb=True)
        else:
            write_png(path, img.image(), srgb=True)
        return path

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(render_frame, range(n_poses)))
