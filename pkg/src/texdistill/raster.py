"""Deterministic software rasterizer.

Produces per-pixel geometric attributes (hit mask, surface point, normal,
depth, triangle id, barycentrics) and the normalized depth image used as
diffusion guidance. One sample per pixel at the pixel center, triangles
processed in index order with a strict depth test, so the output is a pure
function of (mesh, camera). No gradients flow through visibility: geometry is
fixed and materials are evaluated at the resulting surface points.

Triangles with any corner closer than the camera near plane are skipped
rather than clipped; scenes are expected to sit inside the frustum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, Mesh, camera_matrices


@dataclass
class GBuffer:
    hit: np.ndarray        # (H, W) bool
    position: np.ndarray   # (H, W, 3) world-space surface point, 0 on miss
    normal: np.ndarray     # (H, W, 3) unit interpolated normal, 0 on miss
    depth: np.ndarray      # (H, W) camera-space distance, 0 on miss
    tri_id: np.ndarray     # (H, W) int64 triangle index, -1 on miss
    bary: np.ndarray       # (H, W, 3) perspective-correct barycentrics, 0 on miss

    @property
    def resolution(self) -> tuple[int, int]:
        return self.hit.shape

    def hit_points(self) -> np.ndarray:
        return self.position[self.hit]

    def hit_normals(self) -> np.ndarray:
        return self.normal[self.hit]


def rasterize(mesh: Mesh, camera: Camera) -> GBuffer:
    h, w = camera.resolution
    view, proj = camera_matrices(camera)

    verts = mesh.vertices
    hom = np.concatenate([verts, np.ones((len(verts), 1))], axis=1)
    cam_space = hom @ view.T
    clip = cam_space @ proj.T
    vdepth = -cam_space[:, 2]

    wc = clip[:, 3]
    safe_w = np.where(np.abs(wc) < 1e-12, 1e-12, wc)
    ndc = clip[:, :2] / safe_w[:, None]
    sx = (ndc[:, 0] + 1.0) * 0.5 * w
    sy = (1.0 - ndc[:, 1]) * 0.5 * h

    hit = np.zeros((h, w), dtype=bool)
    position = np.zeros((h, w, 3))
    normal = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    zbuf = np.full((h, w), np.inf)
    tri_id = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))

    for f in range(len(mesh.faces)):
        ia, ib, ic = mesh.faces[f]
        if vdepth[ia] <= camera.near or vdepth[ib] <= camera.near or vdepth[ic] <= camera.near:
            continue
        ax, ay = sx[ia], sy[ia]
        bx, by = sx[ib], sy[ib]
        cx, cy = sx[ic], sy[ic]

        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue

        x0 = max(int(np.floor(min(ax, bx, cx) - 0.5)), 0)
        x1 = min(int(np.ceil(max(ax, bx, cx) + 0.5)), w - 1)
        y0 = max(int(np.floor(min(ay, by, cy) - 0.5)), 0)
        y1 = min(int(np.ceil(max(ay, by, cy) + 0.5)), h - 1)
        if x1 < x0 or y1 < y0:
            continue

        px = np.arange(x0, x1 + 1) + 0.5
        py = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(px, py)

        l0 = ((bx - ax) * (gy - ay) - (by - ay) * (gx - ax)) / area
        l1 = ((cx - bx) * (gy - by) - (cy - by) * (gx - bx)) / area
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0.0) & (l1 >= 0.0) & (l2 >= 0.0)
        if not inside.any():
            continue
        # screen barycentrics: weight of vertex k multiplies the edge opposite it
        lam_a, lam_b, lam_c = l1, l2, l0

        inv_w = lam_a / wc[ia] + lam_b / wc[ib] + lam_c / wc[ic]
        persp = np.stack([lam_a / wc[ia], lam_b / wc[ib], lam_c / wc[ic]], axis=-1)
        persp /= inv_w[..., None]
        pix_depth = (persp[..., 0] * vdepth[ia] + persp[..., 1] * vdepth[ib]
                     + persp[..., 2] * vdepth[ic])

        region = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        closer = inside & (pix_depth < zbuf[region]) & (pix_depth > camera.near)
        if not closer.any():
            continue

        pos = (persp[..., :1] * verts[ia] + persp[..., 1:2] * verts[ib]
               + persp[..., 2:3] * verts[ic])
        nrm = (persp[..., :1] * mesh.normals[ia] + persp[..., 1:2] * mesh.normals[ib]
               + persp[..., 2:3] * mesh.normals[ic])
        lengths = np.linalg.norm(nrm, axis=-1, keepdims=True)
        nrm = nrm / np.where(lengths == 0.0, 1.0, lengths)

        mask = closer[..., None]
        zbuf[region] = np.where(closer, pix_depth, zbuf[region])
        hit[region] |= closer
        depth[region] = np.where(closer, pix_depth, depth[region])
        tri_id[region] = np.where(closer, f, tri_id[region])
        position[region] = np.where(mask, pos, position[region])
        normal[region] = np.where(mask, nrm, normal[region])
        bary[region] = np.where(mask, persp, bary[region])

    return GBuffer(hit=hit, position=position, normal=normal, depth=depth,
                   tri_id=tri_id, bary=bary)


def depth_map(gbuffer: GBuffer) -> np.ndarray:
    """Single-channel guidance image in [0, 1]: nearest hit 1, farthest 0, miss 0.

    A constant-depth foreground maps to 1 (degenerate range convention).
    """
    out = np.zeros(gbuffer.resolution)
    if not gbuffer.hit.any():
        return out
    d = gbuffer.depth[gbuffer.hit]
    d_min, d_max = d.min(), d.max()
    if d_max - d_min < 1e-12:
        out[gbuffer.hit] = 1.0
    else:
        out[gbuffer.hit] = (d_max - gbuffer.depth[gbuffer.hit]) / (d_max - d_min)
    return out
