"""Physically based shading against a prefiltered environment light.

The rendering integral is evaluated with the split-sum approximation: a GGX
importance-prefiltered cube-map mip chain indexed by roughness for the
specular lobe, a cosine-convolved irradiance level for the diffuse lobe, and
a precomputed (scale, bias) lookup table over (n.v, roughness) for the
hemispherical specular-BRDF integral. BRDF terms are GGX for the normal
distribution, Schlick for Fresnel, and the height-correlated Smith form for
geometric attenuation, with alpha = roughness^2.

Shading is differentiable w.r.t. material samples only: k_d scales the
diffuse lobe, roughness drives continuous interpolation across the mip chain
and LUT rows, and metallic enters through k_s. Geometry, visibility and the
light itself are constants. Grazing denominators are clamped at 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import Camera
from .images import read_png, srgb_to_linear
from .raster import GBuffer

GRAZING_EPS = 1e-4

# Cube-map face order: +x, -x, +y, -y, +z, -z.
_FACE_AXES = [
    (np.array([0.0, 0.0, -1.0]), np.array([0.0, -1.0, 0.0]), np.array([1.0, 0.0, 0.0])),
    (np.array([0.0, 0.0, 1.0]), np.array([0.0, -1.0, 0.0]), np.array([-1.0, 0.0, 0.0])),
    (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])),
    (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0]), np.array([0.0, -1.0, 0.0])),
    (np.array([1.0, 0.0, 0.0]), np.array([0.0, -1.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    (np.array([-1.0, 0.0, 0.0]), np.array([0.0, -1.0, 0.0]), np.array([0.0, 0.0, -1.0])),
]


class EnvironmentError_(ValueError):
    pass


# -- BRDF terms (point evaluation) ---------------------------------------------

def ggx_ndf(roughness, n_dot_h):
    """GGX normal distribution with alpha = roughness^2."""
    alpha = np.asarray(roughness) ** 2
    a2 = alpha * alpha
    denom = np.asarray(n_dot_h) ** 2 * (a2 - 1.0) + 1.0
    return a2 / (np.pi * denom * denom)


def schlick_fresnel(f0, v_dot_h):
    """Schlick approximation; exact f0 at normal incidence, 1 at grazing."""
    f0 = np.asarray(f0, dtype=np.float64)
    c = (1.0 - np.clip(np.asarray(v_dot_h, dtype=np.float64), 0.0, 1.0)) ** 5
    return f0 + (1.0 - f0) * c


def smith_visibility(roughness, n_dot_l, n_dot_v):
    """Height-correlated Smith term, folded as G / (4 (n.l)(n.v))."""
    a2 = np.asarray(roughness, dtype=np.float64) ** 4
    nl = np.maximum(np.asarray(n_dot_l, dtype=np.float64), GRAZING_EPS)
    nv = np.maximum(np.asarray(n_dot_v, dtype=np.float64), GRAZING_EPS)
    lv = nl * np.sqrt(nv * nv * (1.0 - a2) + a2)
    vl = nv * np.sqrt(nl * nl * (1.0 - a2) + a2)
    return 0.5 / np.maximum(lv + vl, GRAZING_EPS)


def eval_diffuse(kd):
    """Diffuse BRDF value: kd / pi (works on tensors and arrays)."""
    if isinstance(kd, ad.Tensor):
        return kd * (1.0 / np.pi)
    return np.asarray(kd) / np.pi


def eval_specular(n, v, l, roughness, ks):
    """Microfacet specular BRDF D*F*G / (4 (n.l)(n.v)) for unit vectors."""
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    h = l + v
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-12)
    n_dot_l = np.sum(n * l, axis=-1)
    n_dot_v = np.sum(n * v, axis=-1)
    n_dot_h = np.sum(n * h, axis=-1)
    v_dot_h = np.sum(v * h, axis=-1)
    d = ggx_ndf(roughness, n_dot_h)
    vis = smith_visibility(roughness, n_dot_l, n_dot_v)
    f = schlick_fresnel(np.asarray(ks), v_dot_h[..., None])
    return (d * vis)[..., None] * f


# -- cube maps -------------------------------------------------------------------

def face_directions(size: int, face: int) -> np.ndarray:
    """Unit direction for every texel center of one face, (size, size, 3)."""
    t = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    s_grid, t_grid = np.meshgrid(t, t)
    right, down, fwd = _FACE_AXES[face]
    d = (s_grid[..., None] * right + t_grid[..., None] * down + fwd)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def dir_to_face_uv(dirs: np.ndarray):
    """Inverse of face_directions: directions -> (face, u, v) with u,v in [0,1]."""
    d = np.asarray(dirs, dtype=np.float64)
    ax, ay, az = np.abs(d[..., 0]), np.abs(d[..., 1]), np.abs(d[..., 2])
    face = np.where(
        (ax >= ay) & (ax >= az), np.where(d[..., 0] > 0, 0, 1),
        np.where(ay >= az, np.where(d[..., 1] > 0, 2, 3),
                 np.where(d[..., 2] > 0, 4, 5)))
    u = np.empty(face.shape)
    v = np.empty(face.shape)
    for f in range(6):
        m = face == f
        if not m.any():
            continue
        right, down, fwd = _FACE_AXES[f]
        major = d[m] @ fwd
        u[m] = (d[m] @ right) / major
        v[m] = (d[m] @ down) / major
    return face, (u + 1.0) * 0.5, (v + 1.0) * 0.5


def sample_cubemap(faces: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Bilinear cube-map lookup; edges clamp within each face."""
    size = faces.shape[1]
    face, u, v = dir_to_face_uv(dirs)
    x = np.clip(u * size - 0.5, 0.0, size - 1.0)
    y = np.clip(v * size - 0.5, 0.0, size - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, size - 1)
    y0 = np.clip(np.floor(y).astype(int), 0, size - 1)
    x1 = np.minimum(x0 + 1, size - 1)
    y1 = np.minimum(y0 + 1, size - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    c00 = faces[face, y0, x0]
    c01 = faces[face, y0, x1]
    c10 = faces[face, y1, x0]
    c11 = faces[face, y1, x1]
    return ((c00 * (1 - fx) + c01 * fx) * (1 - fy)
            + (c10 * (1 - fx) + c11 * fx) * fy)


@dataclass(frozen=True)
class EnvironmentLight:
    """Six linear-radiance faces, (6, S, S, 3), ordered +x,-x,+y,-y,+z,-z."""
    faces: np.ndarray

    def __post_init__(self):
        if self.faces.ndim != 4 or self.faces.shape[0] != 6 \
                or self.faces.shape[1] != self.faces.shape[2] or self.faces.shape[3] != 3:
            raise EnvironmentError_(f"cube map must be (6, S, S, 3), got {self.faces.shape}")
        if np.any(self.faces < 0.0) or not np.isfinite(self.faces).all():
            raise EnvironmentError_("cube-map radiance must be finite and >= 0")

    @property
    def size(self) -> int:
        return self.faces.shape[1]

    @staticmethod
    def constant(radiance=1.0, size: int = 32) -> "EnvironmentLight":
        rgb = np.broadcast_to(np.asarray(radiance, dtype=np.float64), (3,))
        return EnvironmentLight(np.tile(rgb, (6, size, size, 1)).astype(np.float64))

    @staticmethod
    def from_files(paths) -> "EnvironmentLight":
        """Load six faces (+x,-x,+y,-y,+z,-z): PNG (sRGB) or .npy (linear)."""
        if len(paths) != 6:
            raise EnvironmentError_("expected six cube-map face files")
        faces = []
        for p in paths:
            p = str(p)
            if p.endswith(".npy"):
                faces.append(np.load(p).astype(np.float64))
            else:
                rgb = read_png(p)
                if rgb.ndim == 2:
                    rgb = np.stack([rgb] * 3, axis=-1)
                faces.append(srgb_to_linear(rgb[..., :3]))
        sizes = {f.shape[0] for f in faces} | {f.shape[1] for f in faces}
        if len(sizes) != 1:
            raise EnvironmentError_("cube-map faces must be square and equal-sized")
        return EnvironmentLight(np.stack(faces))


# -- split-sum precomputation -----------------------------------------------------

def _hammersley(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.uint32)
    bits = i.copy()
    bits = ((bits << np.uint32(16)) | (bits >> np.uint32(16)))
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | ((bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | ((bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | ((bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | ((bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    return np.stack([i / n, bits.astype(np.float64) * 2.3283064365386963e-10], axis=1)


def _ggx_half_vectors(xi: np.ndarray, roughness: float) -> np.ndarray:
    """GGX-importance-sampled half vectors around +z (tangent space)."""
    alpha = roughness * roughness
    phi = 2.0 * np.pi * xi[:, 0]
    cos_t = np.sqrt((1.0 - xi[:, 1]) / (1.0 + (alpha * alpha - 1.0) * xi[:, 1]))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t**2))
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)


def _tangent_frame(n: np.ndarray):
    up = np.where(np.abs(n[..., 2:3]) < 0.999, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    t = np.cross(up, n)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    b = np.cross(n, t)
    return t, b


@dataclass(frozen=True)
class PrefilteredEnvironment:
    """Split-sum tables: specular mips, cosine irradiance, BRDF LUT.

    spec_mips[k] holds GGX-prefiltered radiance for mip_roughness[k] at face
    size S/2^k; irradiance holds the cosine-weighted integral (units of
    irradiance, i.e. pi for a constant unit environment); the LUT rows span
    roughness in [r_min, 1] and columns span n.v in (0, 1].
    """
    environment: EnvironmentLight
    spec_mips: tuple[np.ndarray, ...]
    mip_roughness: np.ndarray
    irradiance: np.ndarray
    lut: np.ndarray                  # (R, C, 2): scale, bias
    lut_nv: np.ndarray               # (C,)
    min_roughness: float

    @property
    def n_mips(self) -> int:
        return len(self.spec_mips)


def prefilter(env: EnvironmentLight, n_mips: int = 5, min_roughness: float = 0.08,
              lut_size: int = 64, n_samples: int = 1024,
              irradiance_size: int = 8) -> PrefilteredEnvironment:
    """One-time pure precomputation of the split-sum tables."""
    mip_roughness = np.linspace(min_roughness, 1.0, n_mips)
    xi = _hammersley(n_samples)

    spec_mips = []
    for k in range(n_mips):
        size = max(env.size >> k, 1)
        h_tangent = _ggx_half_vectors(xi, float(mip_roughness[k]))
        mip_faces = np.empty((6, size, size, 3))
        for f in range(6):
            r = face_directions(size, f).reshape(-1, 3)       # N = V = R
            t, b = _tangent_frame(r)
            h = (h_tangent[None, :, :1] * t[:, None]
                 + h_tangent[None, :, 1:2] * b[:, None]
                 + h_tangent[None, :, 2:3] * r[:, None])       # (T, S, 3)
            l = 2.0 * np.sum(r[:, None] * h, axis=-1, keepdims=True) * h - r[:, None]
            n_dot_l = np.sum(r[:, None] * l, axis=-1)
            w = np.maximum(n_dot_l, 0.0)
            colors = sample_cubemap(env.faces, l.reshape(-1, 3)).reshape(l.shape)
            accum = np.sum(colors * w[..., None], axis=1)
            accum /= np.maximum(w.sum(axis=1), 1e-12)[:, None]
            mip_faces[f] = accum.reshape(size, size, 3)
        spec_mips.append(mip_faces)

    # cosine-weighted irradiance via solid-angle quadrature over base texels
    src_dirs = np.concatenate([face_directions(env.size, f).reshape(-1, 3)
                               for f in range(6)])
    grid = (np.arange(env.size) + 0.5) / env.size * 2.0 - 1.0
    sg, tg = np.meshgrid(grid, grid)
    solid = (2.0 / env.size) ** 2 / np.power(sg**2 + tg**2 + 1.0, 1.5)
    solid = np.tile(solid.reshape(-1), 6)
    radiance = env.faces.reshape(-1, 3)
    irradiance = np.empty((6, irradiance_size, irradiance_size, 3))
    for f in range(6):
        n = face_directions(irradiance_size, f).reshape(-1, 3)
        cos = np.maximum(n @ src_dirs.T, 0.0)
        irradiance[f] = ((cos * solid) @ radiance).reshape(irradiance_size, irradiance_size, 3)

    # BRDF integration LUT over (n.v, roughness)
    lut_nv = np.linspace(1.0 / lut_size, 1.0, lut_size)
    lut_rough = np.linspace(min_roughness, 1.0, lut_size)
    lut = np.empty((lut_size, lut_size, 2))
    for j, rough in enumerate(lut_rough):
        h = _ggx_half_vectors(xi, float(rough))                  # around +z
        for i, nv in enumerate(lut_nv):
            v = np.array([np.sqrt(max(0.0, 1.0 - nv * nv)), 0.0, nv])
            v_dot_h = h @ v
            l = 2.0 * v_dot_h[:, None] * h - v
            n_dot_l = l[:, 2]
            valid = (n_dot_l > 0.0) & (v_dot_h > 0.0)
            vis = smith_visibility(rough, np.maximum(n_dot_l, 1e-9), nv)
            # f * (n.l) / pdf_l with pdf_l = D * (n.h) / (4 (v.h)); D cancels
            common = np.where(valid, vis * n_dot_l * 4.0 * v_dot_h
                              / np.maximum(h[:, 2], 1e-9), 0.0)
            fc = np.where(valid, (1.0 - np.clip(v_dot_h, 0.0, 1.0)) ** 5, 0.0)
            lut[j, i, 0] = np.mean(common * (1.0 - fc))
            lut[j, i, 1] = np.mean(common * fc)

    return PrefilteredEnvironment(
        environment=env, spec_mips=tuple(spec_mips), mip_roughness=mip_roughness,
        irradiance=irradiance, lut=lut, lut_nv=lut_nv, min_roughness=min_roughness)


# -- shading ----------------------------------------------------------------------

@dataclass
class ShadedImage:
    """Linear radiance for hit pixels plus the hit mask (alpha)."""
    foreground: ad.Tensor       # (N, 3) radiance at hit pixels, row-major order
    hit: np.ndarray             # (H, W) bool
    background: np.ndarray      # (3,) radiance used for misses

    def image(self) -> np.ndarray:
        h, w = self.hit.shape
        out = np.broadcast_to(self.background, (h, w, 3)).copy()
        out[self.hit] = self.foreground.data
        return out

    def alpha(self) -> np.ndarray:
        return self.hit.astype(np.float64)

    def seed_foreground(self, seed_image: np.ndarray) -> np.ndarray:
        """Slice a full-image gradient seed down to the hit rows."""
        return np.asarray(seed_image)[self.hit]


def _interp_nodes(coords: np.ndarray, axis_nodes: np.ndarray):
    """Bracketing node indices and fraction on a uniform grid: (i0, i1, frac)."""
    n = len(axis_nodes)
    x = (coords - axis_nodes[0]) / (axis_nodes[-1] - axis_nodes[0]) * (n - 1)
    x = np.clip(x, 0.0, n - 1.0)
    i0 = np.clip(np.floor(x).astype(int), 0, n - 2)
    return i0, i0 + 1, x - i0


def shade(gbuffer: GBuffer, materials, pre: PrefilteredEnvironment,
          camera: Camera, background=(0.0, 0.0, 0.0)) -> ShadedImage:
    """Per-pixel split-sum shading; differentiable w.r.t. the material batch.

    materials: MaterialBatch evaluated at gbuffer.hit_points(), same row order
    as the True entries of gbuffer.hit (row-major).
    """
    hit = gbuffer.hit
    n = gbuffer.normal[hit]
    x_p = gbuffer.position[hit]
    eye = camera.position
    v = eye - x_p
    v /= np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)
    n_dot_v = np.clip(np.sum(n * v, axis=-1), GRAZING_EPS, 1.0)
    refl = 2.0 * np.sum(n * v, axis=-1, keepdims=True) * n - v

    # constants w.r.t. materials
    irr = sample_cubemap(pre.irradiance, n)                     # (N, 3)
    mip_colors = [sample_cubemap(m, refl) for m in pre.spec_mips]

    kd = materials.kd
    roughness = materials.roughness
    ks = materials.ks

    # diffuse: (kd / pi) * irradiance
    diffuse = eval_diffuse(kd) * irr

    # specular: prefiltered radiance at the roughness mip x (ks * A + B)
    rough_const = roughness.data
    k0, k1, _ = _interp_nodes(rough_const, pre.mip_roughness)
    rows = np.arange(len(rough_const))
    # gather the two bracketing mip samples per pixel
    mip_stack = np.stack(mip_colors, axis=0)                    # (K, N, 3)
    c_lo = mip_stack[k0, rows]
    c_hi = mip_stack[k1, rows]
    span = pre.mip_roughness[k1] - pre.mip_roughness[k0]
    # differentiable fraction: (roughness - node_lo) / span
    frac_mip = (roughness - pre.mip_roughness[k0]) * (1.0 / np.maximum(span, 1e-12))
    frac_mip = clamp01(frac_mip)
    prefiltered = c_lo + (c_hi - c_lo) * reshape_col(frac_mip)

    # LUT: interpolate along n.v with constant weights, then differentiably
    # along roughness
    lut_rough_nodes = np.linspace(pre.min_roughness, 1.0, pre.lut.shape[0])
    j0, j1, _ = _interp_nodes(rough_const, lut_rough_nodes)
    i0, i1, fx = _interp_nodes(n_dot_v, pre.lut_nv)
    fx = fx[:, None]

    def lut_row(j):
        return pre.lut[j, i0] * (1 - fx) + pre.lut[j, i1] * fx  # (N, 2)

    ab_lo = lut_row(j0)
    ab_hi = lut_row(j1)
    span_r = lut_rough_nodes[j1] - lut_rough_nodes[j0]
    frac_r = clamp01((roughness - lut_rough_nodes[j0]) * (1.0 / np.maximum(span_r, 1e-12)))
    a_term = ab_lo[:, 0] + (ab_hi[:, 0] - ab_lo[:, 0]) * frac_r
    b_term = ab_lo[:, 1] + (ab_hi[:, 1] - ab_lo[:, 1]) * frac_r

    spec_weight = ks * reshape_col(a_term) + reshape_col(b_term)
    specular = prefiltered * spec_weight

    radiance = diffuse + specular
    return ShadedImage(foreground=radiance, hit=hit,
                       background=np.asarray(background, dtype=np.float64))


def reshape_col(t: ad.Tensor) -> ad.Tensor:
    return t.reshape((-1, 1))


def clamp01(t: ad.Tensor) -> ad.Tensor:
    return ad.clamp(t, 0.0, 1.0)
