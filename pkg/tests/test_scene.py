import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pixels_for_extent, sun_vector
from terrasynth import fixtures
from terrasynth.accel import build_bvh
from terrasynth.ingest import Heightfield
from terrasynth.scene import (
    NADIR_R_WC,
    ElevationOutOfRange,
    NoTerrainBelow,
    OrthoCamera,
    PerspectiveIntrinsics,
    PixelOutOfRange,
    Pose,
    SunLight,
    camera_ray,
    make_nadir_pose,
    ortho_ray,
    place_camera,
    pose_from_attitude,
    sun_direction,
    unproject,
)
from terrasynth.terrain import height_at, triangulate

angles = st.floats(-720, 720, allow_nan=False)
elev = st.floats(0, 90)


# ---------------------------------------------------------------- sun


def test_sun_zenith():
    assert sun_direction(123.0, 90.0).tolist() == [0.0, 0.0, 1.0]


def test_sun_east_horizon():
    assert sun_direction(90.0, 0.0).tolist() == [1.0, 0.0, 0.0]


def test_sun_default_observation_angles():
    d = sun_direction(180.0, 40.0)
    assert d == pytest.approx([0.0, -0.766044, 0.642788], abs=1e-6)
    assert d == pytest.approx(sun_vector(180.0, 40.0), abs=1e-15)


@given(angles, elev)
def test_sun_unit_and_formula(az, el):
    d = sun_direction(az, el)
    assert abs(np.linalg.norm(d) - 1.0) <= 1e-12
    assert d == pytest.approx(sun_vector(az, el), abs=1e-12)


@given(angles, angles)
def test_sun_zenith_independent_of_azimuth(a, b):
    assert sun_direction(a, 90.0).tobytes() == sun_direction(b, 90.0).tobytes()


@pytest.mark.parametrize("el", [-1.0, 90.5])
def test_sun_elevation_range(el):
    with pytest.raises(ElevationOutOfRange):
        sun_direction(0.0, el)
    with pytest.raises(ElevationOutOfRange):
        SunLight(0.0, el)


def test_sunlight_defaults():
    s = SunLight()
    assert (s.irradiance, s.angular_diameter_deg) == (590.0, 0.35)
    with pytest.raises(ValueError):
        SunLight(irradiance=0.0)
    with pytest.raises(ValueError):
        SunLight(angular_diameter_deg=-1.0)


# ---------------------------------------------------------------- poses


def test_nadir_pose():
    p = make_nadir_pose(3.0, 4.0, 50.0)
    assert p.R_WC.tolist() == [[1, 0, 0], [0, -1, 0], [0, 0, -1]]
    assert p.is_rotation()
    assert p.R_WC[:, 2].tolist() == [0.0, 0.0, -1.0]
    assert p.world_to_camera([3.0, 4.0, 40.0]).tolist() == [0.0, 0.0, 10.0]


def test_attitude_zero_is_nadir():
    assert np.array_equal(pose_from_attitude(1, 2, 3).R_WC, NADIR_R_WC)


def test_yaw_90_maps_camera_x_south():
    R = pose_from_attitude(0, 0, 10, yaw=90.0).R_WC
    assert R[:, 0].tolist() == [0.0, -1.0, 0.0]
    assert R[:, 2].tolist() == [0.0, 0.0, -1.0]


@settings(max_examples=100)
@given(angles, angles, angles, angles, angles, angles)
def test_attitude_composition_is_rotation(y1, p1, r1, y2, p2, r2):
    a = pose_from_attitude(0, 0, 0, y1, p1, r1).R_WC
    b = pose_from_attitude(0, 0, 0, y2, p2, r2).R_WC
    c = a @ b
    assert np.allclose(c.T @ c, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(c) - 1.0) <= 1e-9


@settings(max_examples=100)
@given(angles, angles, angles, st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6))
def test_frame_round_trip(yaw, pitch, roll, v):
    pose = pose_from_attitude(v[0], v[1], v[2], yaw, pitch, roll)
    p = np.array(v[3:])
    back = pose.camera_to_world(pose.world_to_camera(p))
    assert np.allclose(back, p, atol=1e-9)


def test_pose_copies_inputs():
    R = np.eye(3)
    p = Pose(R, [0, 0, 0])
    R[0, 0] = 5.0
    assert p.R_WC[0, 0] == 1.0


# ---------------------------------------------------------------- placement


def _bvh(h):
    m = triangulate(h)
    return build_bvh(m), m


def test_place_flat_zero():
    bvh, m = _bvh(fixtures.flat(9))
    p = place_camera(bvh, m, 1.5, -2.25, 100.0)
    assert p.t_WC.tolist() == [1.5, -2.25, 100.0]


@settings(max_examples=50)
@given(st.floats(-100, 100), st.floats(0.1, 500), st.floats(-3.9, 3.9), st.floats(-3.9, 3.9))
def test_place_flat_additive(z0, agl, x, y):
    bvh, m = _bvh(fixtures.flat(9, 1.0, z0))
    assert place_camera(bvh, m, x, y, agl).t_WC[2] == z0 + agl


def test_place_at_posts_matches_oracle(hills_field):
    bvh, m = _bvh(hills_field)
    h = hills_field
    rng = np.random.default_rng(0)
    for _ in range(50):
        i, j = rng.integers(0, h.rows), rng.integers(0, h.cols)
        x, y = float(h.post_x(j)), float(h.post_y(i))
        z = place_camera(bvh, m, x, y, 64.0).t_WC[2] - 64.0
        assert abs(z - height_at(h, x, y)) <= 1e-9 * max(1.0, abs(z))


def test_place_interior_within_cell_deviation(hills_field):
    bvh, m = _bvh(hills_field)
    h = hills_field
    z = h.elevations
    dev = max(np.abs(np.diff(z, axis=0)).max(), np.abs(np.diff(z, axis=1)).max())
    rng = np.random.default_rng(1)
    for x, y in rng.uniform(-31, 31, (50, 2)):
        zc = place_camera(bvh, m, x, y, 10.0).t_WC[2] - 10.0
        assert abs(zc - height_at(h, x, y)) <= dev


def test_place_with_attitude():
    bvh, m = _bvh(fixtures.flat(9))
    p = place_camera(bvh, m, 0.0, 0.0, 5.0, (30.0, 5.0, -5.0))
    assert p.is_rotation() and p.t_WC[2] == 5.0


def test_place_errors():
    z = np.zeros((5, 5))
    z[1:3, 1:3] = np.nan
    bvh, m = _bvh(Heightfield.from_array(z, 1.0))
    with pytest.raises(NoTerrainBelow):
        place_camera(bvh, m, -0.5, 0.5, 10.0)  # nodata hole
    with pytest.raises(NoTerrainBelow):
        place_camera(bvh, m, 50.0, 0.0, 10.0)  # outside footprint
    with pytest.raises(ValueError):
        place_camera(bvh, m, 1.5, -1.5, 0.0)


# ---------------------------------------------------------------- cameras


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        PerspectiveIntrinsics(10, 10, 0.0, 5.0, 5.0, 5.0)
    with pytest.raises(ValueError):
        PerspectiveIntrinsics(10, 10, 5.0, 5.0, 10.0, 5.0)
    i = PerspectiveIntrinsics()
    assert (i.width, i.fx, i.cx) == (512, 256.0, 256.0)
    assert i.hfov_deg == pytest.approx(90.0)
    assert PerspectiveIntrinsics.from_hfov(512, 512, 90.0).fx == pytest.approx(256.0)


def test_principal_ray_is_optical_axis():
    intr = PerspectiveIntrinsics()
    pose = pose_from_attitude(0, 0, 100, 20.0, 10.0, -5.0)
    r = camera_ray(intr, pose, 256, 256, subpixel=(0.0, 0.0))
    assert np.allclose(r.direction, pose.R_WC[:, 2], atol=1e-12)
    nadir = camera_ray(intr, make_nadir_pose(0, 0, 100), 256, 256, (0.0, 0.0))
    assert nadir.direction == (0.0, 0.0, -1.0)


def test_corner_half_angle_90_hfov():
    intr = PerspectiveIntrinsics(512, 512, 256.0, 256.0, 256.0, 256.0)
    r = camera_ray(intr, make_nadir_pose(0, 0, 0), 0, 256, subpixel=(0.0, 0.0))
    d = np.array(r.direction)
    assert math.degrees(math.atan2(abs(d[0]), -d[2])) == pytest.approx(45.0, abs=1e-9)


@settings(max_examples=100)
@given(st.integers(0, 63), st.integers(0, 47), st.floats(0, 0.999), st.floats(0, 0.999), angles, angles)
def test_camera_rays_unit(px, py, sx, sy, yaw, pitch):
    intr = PerspectiveIntrinsics(64, 48, 40.0, 41.0, 30.0, 25.0)
    r = camera_ray(intr, pose_from_attitude(0, 0, 0, yaw, pitch, 0), px, py, (sx, sy))
    assert abs(np.linalg.norm(r.direction) - 1) <= 1e-9


def test_pixel_range():
    with pytest.raises(PixelOutOfRange):
        camera_ray(PerspectiveIntrinsics(8, 8, 4, 4, 4, 4), make_nadir_pose(0, 0, 0), 8, 0)
    with pytest.raises(PixelOutOfRange):
        ortho_ray(OrthoCamera(8, 8, 1.0), 0, -1)


def test_ortho_center_pixel_odd():
    cam = OrthoCamera(5, 7, 0.5, (10.0, -3.0), 100.0)
    r = ortho_ray(cam, 2, 3)
    assert r.origin == (10.0, -3.0, 100.0)
    assert r.direction == (0.0, 0.0, -1.0)
    r0 = ortho_ray(cam, 2, 3, subpixel=(0.0, 0.0))
    assert abs(r0.origin[0] - 10.0) <= 0.25 and abs(r0.origin[1] + 3.0) <= 0.25


def test_ortho_adjacent_pixels():
    cam = OrthoCamera(10, 10, 0.25, (1.0, 2.0), 50.0)
    a, b = ortho_ray(cam, 3, 4), ortho_ray(cam, 4, 4)
    assert (b.origin[0] - a.origin[0], b.origin[1] - a.origin[1]) == (0.25, 0.0)
    # row 0 is the north edge
    assert ortho_ray(cam, 0, 0).origin[1] > ortho_ray(cam, 0, 9).origin[1]


def test_ortho_size_full_extent():
    w, h = OrthoCamera.size_for_extent(6737.0, 14403.0, 0.25)
    assert (w, h) == (pixels_for_extent(6737, 0.25), pixels_for_extent(14403, 0.25)) == (26948, 57612)


def test_unproject_inverts_camera_rays():
    intr = PerspectiveIntrinsics(6, 4, 3.0, 3.0, 3.0, 2.0)
    pose = pose_from_attitude(1, 2, 30, 15.0, 5.0, 3.0)
    depth = np.full((4, 6), 12.5)
    depth[0, 0] = 0.0
    pts = unproject(intr, pose, depth)
    assert np.all(np.isnan(pts[0, 0]))
    r = camera_ray(intr, pose, 4, 3)
    assert np.allclose(pts[3, 4], r.at(12.5), atol=1e-12)
