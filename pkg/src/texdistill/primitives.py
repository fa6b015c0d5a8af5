"""Procedural meshes: unit quad, box, UV sphere, and a blocky mannequin.

Used by tests, docs and the bundled assets. The mannequin is a low-poly
humanoid assembled from boxes with a simple per-part UV atlas and a
face-center annotation for the semantic-zoom camera.
"""

from __future__ import annotations

import numpy as np

from .geometry import Mesh, triangle_areas, vertex_normals, ZERO_AREA_EPS


def _build(vertices, faces, uvs=None, face_uvs=None, face_center=None,
           normals=None) -> Mesh:
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    keep = triangle_areas(vertices, faces) > ZERO_AREA_EPS
    faces = faces[keep]
    if face_uvs is not None:
        face_uvs = np.asarray(face_uvs, dtype=np.int64)[keep]
    if normals is None:
        normals = vertex_normals(vertices, faces)
    return Mesh(vertices=vertices, faces=faces, normals=normals,
                uvs=None if uvs is None else np.asarray(uvs, dtype=np.float64),
                face_uvs=face_uvs,
                face_center=None if face_center is None else np.asarray(face_center, float))


def make_quad(half=0.5, z=0.0, uv_inset=0.0) -> Mesh:
    """Axis-aligned quad in the z-plane with optional inset UVs."""
    lo, hi = uv_inset, 1.0 - uv_inset
    verts = [[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]]
    uvs = [[lo, lo], [hi, lo], [hi, hi], [lo, hi]]
    faces = [[0, 1, 2], [0, 2, 3]]
    return _build(verts, faces, uvs=uvs, face_uvs=faces)


_BOX_FACES = [  # (axis, sign, corner order) for +x,-x,+y,-y,+z,-z
    (0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1),
]


def _box_part(center, size, uv_cell):
    """One box: 8 corners, 12 triangles, each face UV-mapped into a sub-cell."""
    cx, cy, cz = center
    sx, sy, sz = np.asarray(size) / 2.0
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy)
                        for z in (-sz, sz)]) + [cx, cy, cz]
    verts, faces, uvs, face_uvs = [], [], [], []
    u0, v0, du, dv = uv_cell
    for fi, (axis, sign) in enumerate(_BOX_FACES):
        idx = [i for i in range(8)
               if (1 if (i >> (2 - axis)) & 1 else -1) == sign]
        quad = [corners[i] for i in (idx[0], idx[1], idx[3], idx[2])]  # perimeter
        # wind so the face normal points outward (vertex normals average cleanly)
        outward = np.zeros(3)
        outward[axis] = sign
        n = np.cross(quad[1] - quad[0], quad[2] - quad[0])
        if n @ outward < 0:
            quad.reverse()
        base = len(verts)
        verts.extend(quad)
        # 3x2 grid of face patches inside the part's atlas cell
        fu, fv = fi % 3, fi // 3
        pu, pv = u0 + fu * du / 3.0, v0 + fv * dv / 2.0
        uvs.extend([[pu, pv], [pu + du / 3.0, pv], [pu + du / 3.0, pv + dv / 2.0],
                    [pu, pv + dv / 2.0]])
        for tri in ([0, 1, 2], [0, 2, 3]):
            faces.append([base + k for k in tri])
            face_uvs.append([base + k for k in tri])
    return np.asarray(verts), faces, uvs, face_uvs


def make_box(center=(0, 0, 0), size=(1, 1, 1)) -> Mesh:
    verts, faces, uvs, face_uvs = _box_part(center, size, (0.0, 0.0, 1.0, 1.0))
    return _build(verts, faces, uvs=uvs, face_uvs=face_uvs)


def make_uv_sphere(radius=1.0, rings=16, segments=24, center=(0, 0, 0)) -> Mesh:
    cx, cy, cz = center
    verts, uvs, normals = [], [], []
    for i in range(rings + 1):
        theta = np.pi * i / rings
        for j in range(segments + 1):
            phi = 2.0 * np.pi * j / segments
            n = np.array([np.sin(theta) * np.cos(phi), np.cos(theta),
                          np.sin(theta) * np.sin(phi)])
            verts.append(radius * n + [cx, cy, cz])
            normals.append(n)
            uvs.append([j / segments, 1.0 - i / rings])
    faces = []
    for i in range(rings):
        for j in range(segments):
            a = i * (segments + 1) + j
            b = a + segments + 1
            faces.append([a, b, a + 1])
            faces.append([a + 1, b, b + 1])
    normals = np.asarray(normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return _build(verts, faces, uvs=uvs, face_uvs=faces, normals=normals)


# Mannequin parts: (center, size); coordinates chosen to sit inside the unit
# sphere so normalization on load is close to a no-op.
_MANNEQUIN_PARTS = {
    "torso": ((0.0, 0.12, 0.0), (0.44, 0.56, 0.22)),
    "head": ((0.0, 0.58, 0.0), (0.22, 0.26, 0.22)),
    "arm_l": ((-0.31, 0.10, 0.0), (0.13, 0.52, 0.13)),
    "arm_r": ((0.31, 0.10, 0.0), (0.13, 0.52, 0.13)),
    "leg_l": ((-0.12, -0.45, 0.0), (0.17, 0.58, 0.17)),
    "leg_r": ((0.12, -0.45, 0.0), (0.17, 0.58, 0.17)),
}

MANNEQUIN_FACE_CENTER = (0.0, 0.58, 0.11)  # front of the head box


def make_mannequin() -> Mesh:
    verts_all, faces_all, uvs_all, face_uvs_all = [], [], [], []
    cells = [(i % 3 / 3.0, i // 3 / 2.0, 1 / 3.0, 1 / 2.0)
             for i in range(len(_MANNEQUIN_PARTS))]
    offset = 0
    uv_offset = 0
    for (name, (center, size)), cell in zip(_MANNEQUIN_PARTS.items(), cells):
        verts, faces, uvs, face_uvs = _box_part(center, size, cell)
        verts_all.append(verts)
        faces_all.extend([[offset + k for k in tri] for tri in faces])
        uvs_all.extend(uvs)
        face_uvs_all.extend([[uv_offset + k for k in tri] for tri in face_uvs])
        offset += len(verts)
        uv_offset += len(uvs)
    return _build(np.concatenate(verts_all), faces_all, uvs=uvs_all,
                  face_uvs=face_uvs_all, face_center=MANNEQUIN_FACE_CENTER)


if __name__ == "__main__":
    # regenerate the bundled mannequin asset: python -m texdistill.primitives [dir]
    import sys
    from .geometry import save_obj

    out = sys.argv[1] if len(sys.argv) > 1 else "assets"
    save_obj(make_mannequin(), f"{out}/mannequin.obj")
    print(f"wrote {out}/mannequin.obj (face_center {MANNEQUIN_FACE_CENTER})")
