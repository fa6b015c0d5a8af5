import numpy as np
import pytest
from scipy import stats

from texdistill import geometry as geo


CUBE_OBJ = """
v -0.5 -0.5 -0.5
v  0.5 -0.5 -0.5
v  0.5  0.5 -0.5
v -0.5  0.5 -0.5
v -0.5 -0.5  0.5
v  0.5 -0.5  0.5
v  0.5  0.5  0.5
v -0.5  0.5  0.5
f 1 2 3 4
f 6 5 8 7
f 5 6 2 1
f 4 3 7 8
f 2 6 7 3
f 5 1 4 8
"""

QUAD_OBJ = """
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3
f 1 3 4
"""


@pytest.fixture
def cube_path(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    return p


def test_load_cube_topology(cube_path):
    mesh = geo.load_mesh(cube_path, normalize=False)
    assert len(mesh.vertices) == 8
    assert len(mesh.faces) == 12


def test_zero_area_triangle_dropped(tmp_path):
    p = tmp_path / "degen.obj"
    p.write_text(QUAD_OBJ + "f 1 2 2\n")
    mesh = geo.load_mesh(p, normalize=False)
    assert len(mesh.faces) == 2


def test_planar_quad_normals(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text(QUAD_OBJ)
    mesh = geo.load_mesh(p, normalize=False)
    assert np.allclose(mesh.normals, [0.0, 0.0, 1.0], atol=1e-12)


def test_empty_mesh_rejected(tmp_path):
    p = tmp_path / "empty.obj"
    p.write_text("# nothing here\n")
    with pytest.raises(geo.MeshError):
        geo.load_mesh(p)


def test_unreadable_file_rejected(tmp_path):
    with pytest.raises(geo.MeshError):
        geo.load_mesh(tmp_path / "missing.obj")


def test_non_manifold_accepted_with_warning(tmp_path):
    p = tmp_path / "fan.obj"
    p.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nv 1 1 1\n"
        "f 1 2 3\nf 1 2 4\nf 1 2 5\n")
    with pytest.warns(UserWarning, match="non-manifold"):
        mesh = geo.load_mesh(p, normalize=False)
    assert len(mesh.faces) == 3


def test_normalization_fits_unit_sphere(cube_path):
    mesh = geo.load_mesh(cube_path)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert radii.max() == pytest.approx(1.0, abs=1e-12)


def test_mesh_validate_catches_bad_normals(cube_path):
    mesh = geo.load_mesh(cube_path)
    bad = geo.Mesh(mesh.vertices, mesh.faces, mesh.normals * 2.0)
    with pytest.raises(geo.MeshError):
        bad.validate()


# -- samplers -------------------------------------------------------------------

def test_body_camera_ranges_10k():
    rng = np.random.default_rng(0)
    cfg = geo.body_camera_config()
    cams = [geo.sample_body_camera(rng, cfg, np.zeros(3)) for _ in range(10_000)]
    elev = np.array([c.elevation for c in cams])
    azim = np.array([c.azimuth for c in cams])
    assert elev.min() > -np.pi / 18 and elev.max() < np.pi / 4
    assert azim.min() > np.pi / 7 and azim.max() < np.pi / 4
    assert all(c.radius == 3.0 for c in cams[:10])


def test_face_camera_ranges_10k():
    rng = np.random.default_rng(1)
    cfg = geo.face_camera_config()
    center = np.array([0.1, 0.7, 0.0])
    cams = [geo.sample_face_camera(rng, center, cfg) for _ in range(10_000)]
    elev = np.array([c.elevation for c in cams])
    azim = np.array([c.azimuth for c in cams])
    assert elev.min() > -np.pi / 4 and elev.max() < np.pi / 4
    assert azim.min() > 7 * np.pi / 18 and azim.max() < 5 * np.pi / 9
    assert np.array_equal(cams[0].look_at, center)
    assert cams[0].radius == 0.8


def test_face_camera_radius_passthrough():
    rng = np.random.default_rng(2)
    cfg = geo.CameraRangeConfig(0.55, geo.FACE_ELEVATION, geo.FACE_AZIMUTH)
    cam = geo.sample_face_camera(rng, np.zeros(3), cfg)
    assert cam.radius == 0.55


def test_face_camera_requires_center():
    rng = np.random.default_rng(3)
    with pytest.raises(geo.MeshError, match="face_center"):
        geo.sample_face_camera(rng, None, geo.face_camera_config())


def test_sampler_determinism():
    cfg = geo.body_camera_config()
    c1 = geo.sample_body_camera(np.random.default_rng(9), cfg, np.zeros(3))
    c2 = geo.sample_body_camera(np.random.default_rng(9), cfg, np.zeros(3))
    assert c1.elevation == c2.elevation and c1.azimuth == c2.azimuth


def test_collapsed_interval():
    cfg = geo.CameraRangeConfig(3.0, (0.0, 0.0), geo.BODY_AZIMUTH)
    rng = np.random.default_rng(4)
    for _ in range(5):
        assert geo.sample_body_camera(rng, cfg, np.zeros(3)).elevation == 0.0


def test_sampled_angles_ks_uniform():
    rng = np.random.default_rng(12345)
    cfg = geo.body_camera_config()
    cams = [geo.sample_body_camera(rng, cfg, np.zeros(3)) for _ in range(10_000)]
    for values, (lo, hi) in [
        (np.array([c.elevation for c in cams]), cfg.elevation_range),
        (np.array([c.azimuth for c in cams]), cfg.azimuth_range),
    ]:
        res = stats.kstest(values, stats.uniform(loc=lo, scale=hi - lo).cdf)
        assert res.pvalue > 0.01


def test_camera_position_norm_is_radius():
    rng = np.random.default_rng(7)
    cfg = geo.body_camera_config()
    for _ in range(100):
        cam = geo.sample_body_camera(rng, cfg, np.zeros(3))
        assert np.linalg.norm(cam.position) == pytest.approx(cam.radius, abs=1e-6)


# -- matrices --------------------------------------------------------------------

def test_on_axis_projection_hits_image_center():
    cam = geo.Camera(radius=2.0, elevation=0.0, azimuth=0.0,
                     look_at=np.zeros(3), resolution=(64, 64))
    px, depth, visible = geo.project_points(np.zeros((1, 3)), cam)
    assert visible[0]
    assert px[0] == pytest.approx([32.0, 32.0], abs=1e-9)
    assert depth[0] == pytest.approx(2.0)


def test_point_behind_camera_flagged():
    cam = geo.Camera(radius=2.0, elevation=0.0, azimuth=0.0, look_at=np.zeros(3))
    behind = cam.position + (cam.position - cam.look_at)
    _, _, visible = geo.project_points(behind[None, :], cam)
    assert not visible[0]


def test_view_matrix_invertible():
    rng = np.random.default_rng(8)
    cfg = geo.body_camera_config()
    cam = geo.sample_body_camera(rng, cfg, np.array([0.3, -0.2, 0.1]))
    view, proj = geo.camera_matrices(cam)
    assert np.allclose(view @ np.linalg.inv(view), np.eye(4), atol=1e-6)
    assert abs(np.linalg.det(proj)) > 1e-12


def test_camera_invariant_checks():
    with pytest.raises(ValueError):
        geo.Camera(radius=0.0, elevation=0.0, azimuth=0.0, look_at=np.zeros(3))
    with pytest.raises(ValueError):
        geo.Camera(radius=1.0, elevation=0.0, azimuth=0.0,
                   look_at=np.zeros(3), resolution=(4, 4))
