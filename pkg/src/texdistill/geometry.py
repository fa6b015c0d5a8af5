"""Mesh ingestion and the spherical camera model.

Meshes come in as triangulated OBJ and are normalized on load to fit the unit
sphere at the origin, so the default body-camera radius of 3 frames the whole
subject. Cameras live in spherical coordinates (radius, elevation, azimuth)
around a look-at point; the body and face samplers draw their angles uniformly
from configured intervals. Everything here is immutable after construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

WORLD_UP = np.array([0.0, 1.0, 0.0])

# Default spherical sampling intervals (radians). Elevation is measured from
# the horizontal plane, azimuth around the up axis; both samplers read their
# ranges from config so the convention can be swapped per scene.
BODY_RADIUS = 3.0
BODY_ELEVATION = (-np.pi / 18.0, np.pi / 4.0)
BODY_AZIMUTH = (np.pi / 7.0, np.pi / 4.0)
FACE_RADIUS = 0.8
FACE_ELEVATION = (-np.pi / 4.0, np.pi / 4.0)
FACE_AZIMUTH = (7.0 * np.pi / 18.0, 5.0 * np.pi / 9.0)

ZERO_AREA_EPS = 1e-12


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray          # (V, 3) float64, scene units
    faces: np.ndarray             # (F, 3) int64 vertex indices
    normals: np.ndarray           # (V, 3) unit vertex normals
    uvs: np.ndarray | None = None         # (V, 2) per-vertex UVs, if present
    face_uvs: np.ndarray | None = None    # (F, 3) indices into uvs, if present
    face_center: np.ndarray | None = None  # annotated 3-D point, if present

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def triangle_corners(self) -> np.ndarray:
        return self.vertices[self.faces]

    def validate(self) -> None:
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")
        norms = np.linalg.norm(self.normals, axis=1)
        if not np.all(np.abs(norms - 1.0) < 1e-4):
            raise MeshError("vertex normals are not unit length")
        if np.any(triangle_areas(self.vertices, self.faces) <= ZERO_AREA_EPS):
            raise MeshError("zero-area triangle survived loading")


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals."""
    tri = vertices[faces]
    face_n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])  # length = 2*area
    normals = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(normals, faces[:, k], face_n)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    lengths[lengths == 0.0] = 1.0
    return normals / lengths


def normalize_to_unit_sphere(mesh: Mesh) -> Mesh:
    """Uniformly scale + translate so vertices fit the unit sphere at origin."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    radius = np.linalg.norm(mesh.vertices - center, axis=1).max()
    scale = 1.0 / radius if radius > 0 else 1.0
    verts = (mesh.vertices - center) * scale
    face_center = None
    if mesh.face_center is not None:
        face_center = (mesh.face_center - center) * scale
    return replace(mesh, vertices=verts, face_center=face_center)


def _parse_obj(path: Path):
    positions: list[list[float]] = []
    texcoords: list[list[float]] = []
    normals_in: list[list[float]] = []
    faces: list[list[tuple[int, int | None, int | None]]] = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            positions.append([float(x) for x in parts[1:4]])
        elif tag == "vt":
            texcoords.append([float(x) for x in parts[1:3]])
        elif tag == "vn":
            normals_in.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            corners = []
            for token in parts[1:]:
                fields = token.split("/")
                vi = int(fields[0])
                ti = int(fields[1]) if len(fields) > 1 and fields[1] else None
                ni = int(fields[2]) if len(fields) > 2 and fields[2] else None
                corners.append((vi, ti, ni))
            faces.append(corners)
    return positions, texcoords, normals_in, faces


def load_mesh(path: str | Path, face_center=None, normalize: bool = True) -> Mesh:
    """Load a triangulated OBJ; polygons are fan-triangulated.

    Degenerate (zero-area) triangles are dropped, vertex normals are computed
    from geometry when the file carries none, and the mesh is normalized to
    the unit sphere unless `normalize=False`.
    """
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"mesh file not found: {path}")
    positions, texcoords, obj_normals, polygons = _parse_obj(path)
    if not positions or not polygons:
        raise MeshError(f"mesh file has no geometry: {path}")

    vertices = np.asarray(positions, dtype=np.float64)
    n_verts = len(vertices)

    def resolve(idx: int, count: int) -> int:
        return idx - 1 if idx > 0 else count + idx

    tri_faces: list[list[int]] = []
    tri_uvs: list[list[int]] = []
    has_uv = bool(texcoords)
    for corners in polygons:
        for a, b in zip(range(1, len(corners) - 1), range(2, len(corners))):
            fan = [corners[0], corners[a], corners[b]]
            tri_faces.append([resolve(c[0], n_verts) for c in fan])
            if has_uv and all(c[1] is not None for c in fan):
                tri_uvs.append([resolve(c[1], len(texcoords)) for c in fan])
            else:
                has_uv = has_uv and not tri_uvs  # mixed UV presence: drop UVs
    faces = np.asarray(tri_faces, dtype=np.int64)
    if faces.size and (faces.min() < 0 or faces.max() >= n_verts):
        raise MeshError(f"face index out of range in {path}")

    areas = triangle_areas(vertices, faces)
    keep = areas > ZERO_AREA_EPS
    if not np.all(keep):
        faces = faces[keep]
        if has_uv and tri_uvs:
            tri_uvs = [uv for uv, k in zip(tri_uvs, keep) if k]
    if faces.shape[0] == 0:
        raise MeshError(f"mesh has no non-degenerate triangles: {path}")

    edge_pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edge_pairs = np.sort(edge_pairs, axis=1)
    _, counts = np.unique(edge_pairs, axis=0, return_counts=True)
    if np.any(counts > 2):
        warnings.warn(f"non-manifold mesh accepted: {path}", stacklevel=2)

    normals = vertex_normals(vertices, faces)

    mesh = Mesh(
        vertices=vertices,
        faces=faces,
        normals=normals,
        uvs=np.asarray(texcoords, dtype=np.float64) if has_uv and tri_uvs else None,
        face_uvs=np.asarray(tri_uvs, dtype=np.int64) if has_uv and tri_uvs else None,
        face_center=None if face_center is None else np.asarray(face_center, dtype=np.float64),
    )
    if normalize:
        mesh = normalize_to_unit_sphere(mesh)
    mesh.validate()
    return mesh


def save_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices]
    if mesh.uvs is not None:
        lines += [f"vt {t[0]:.9g} {t[1]:.9g}" for t in mesh.uvs]
        for f, t in zip(mesh.faces, mesh.face_uvs):
            lines.append(f"f {f[0]+1}/{t[0]+1} {f[1]+1}/{t[1]+1} {f[2]+1}/{t[2]+1}")
    else:
        lines += [f"f {f[0]+1} {f[1]+1} {f[2]+1}" for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# -- cameras -------------------------------------------------------------------


@dataclass(frozen=True)
class Camera:
    radius: float
    elevation: float              # radians above the horizontal plane
    azimuth: float                # radians around the up axis
    look_at: np.ndarray
    fov_y: float = np.pi / 4.0
    resolution: tuple[int, int] = (64, 64)   # (height, width)
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("camera radius must be positive")
        if min(self.resolution) < 8:
            raise ValueError("camera resolution must be at least 8x8")

    @property
    def position(self) -> np.ndarray:
        ce = np.cos(self.elevation)
        offset = np.array([
            ce * np.sin(self.azimuth),
            np.sin(self.elevation),
            ce * np.cos(self.azimuth),
        ])
        return self.look_at + self.radius * offset


@dataclass(frozen=True)
class CameraRangeConfig:
    radius: float
    elevation_range: tuple[float, float]
    azimuth_range: tuple[float, float]
    fov_y: float = np.pi / 4.0
    resolution: tuple[int, int] = (64, 64)

    def __post_init__(self):
        for lo, hi in (self.elevation_range, self.azimuth_range):
            if hi < lo:
                raise ValueError("camera angle range is not a valid interval")


def body_camera_config(resolution=(64, 64), fov_y=np.pi / 4.0) -> CameraRangeConfig:
    return CameraRangeConfig(BODY_RADIUS, BODY_ELEVATION, BODY_AZIMUTH, fov_y, tuple(resolution))


def face_camera_config(resolution=(64, 64), fov_y=np.pi / 4.0) -> CameraRangeConfig:
    return CameraRangeConfig(FACE_RADIUS, FACE_ELEVATION, FACE_AZIMUTH, fov_y, tuple(resolution))


def _sample_interval(rng: np.random.Generator, interval: tuple[float, float]) -> float:
    lo, hi = interval
    return lo if hi == lo else float(rng.uniform(lo, hi))


def sample_body_camera(rng: np.random.Generator, config: CameraRangeConfig,
                       look_at: np.ndarray) -> Camera:
    return Camera(
        radius=config.radius,
        elevation=_sample_interval(rng, config.elevation_range),
        azimuth=_sample_interval(rng, config.azimuth_range),
        look_at=np.asarray(look_at, dtype=np.float64),
        fov_y=config.fov_y,
        resolution=config.resolution,
    )


def sample_face_camera(rng: np.random.Generator, face_center,
                       config: CameraRangeConfig) -> Camera:
    if face_center is None:
        raise MeshError(
            "face camera requires a face-center annotation; add `face_center: "
            "[x, y, z]` to the scene config or mesh sidecar")
    return Camera(
        radius=config.radius,
        elevation=_sample_interval(rng, config.elevation_range),
        azimuth=_sample_interval(rng, config.azimuth_range),
        look_at=np.asarray(face_center, dtype=np.float64),
        fov_y=config.fov_y,
        resolution=config.resolution,
    )


def camera_matrices(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed view matrix and OpenGL-style perspective projection."""
    eye = camera.position
    forward = camera.look_at - eye
    forward = forward / np.linalg.norm(forward)
    up_hint = WORLD_UP if abs(forward @ WORLD_UP) < 0.999 else np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up_hint)
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)

    view = np.eye(4)
    view[0, :3] = right
    view[1, :3] = up
    view[2, :3] = -forward
    view[:3, 3] = -view[:3, :3] @ eye

    h, w = camera.resolution
    aspect = w / h
    f = 1.0 / np.tan(camera.fov_y / 2.0)
    n, fr = camera.near, camera.far
    proj = np.zeros((4, 4))
    proj[0, 0] = f / aspect
    proj[1, 1] = f
    proj[2, 2] = (fr + n) / (n - fr)
    proj[2, 3] = 2.0 * fr * n / (n - fr)
    proj[3, 2] = -1.0
    return view, proj


def project_points(points: np.ndarray, camera: Camera):
    """World points -> (pixel xy, view-space depth, visible flag).

    Pixel coordinates put pixel (i, j)'s center at (j + 0.5, i + 0.5); depth
    is the distance along the viewing axis (positive in front).
    """
    view, proj = camera_matrices(camera)
    pts = np.atleast_2d(points)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    cam = hom @ view.T
    clip = cam @ proj.T
    depth = -cam[:, 2]
    visible = depth > camera.near
    w_clip = np.where(np.abs(clip[:, 3]) < 1e-12, 1e-12, clip[:, 3])
    ndc = clip[:, :3] / w_clip[:, None]
    h, w = camera.resolution
    px = (ndc[:, 0] + 1.0) * 0.5 * w
    py = (1.0 - ndc[:, 1]) * 0.5 * h
    visible &= (np.abs(ndc[:, 0]) <= 1.0) & (np.abs(ndc[:, 1]) <= 1.0)
    return np.stack([px, py], axis=1), depth, visible
