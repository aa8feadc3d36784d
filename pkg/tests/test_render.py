import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import binomial_sigma, disk_fraction_beyond, lambert_radiance, shadow_length
from terrasynth import fixtures
from terrasynth.accel import Hit, Ray, intersect
from terrasynth.render import (
    InvalidConfig,
    PixelRng,
    RadianceImage,
    RenderConfig,
    SceneBundle,
    expose_quantize,
    occlusion_fraction,
    render_image,
    render_ortho_map,
    shade,
)
from terrasynth.scene import OrthoCamera, PerspectiveIntrinsics, SunLight, camera_ray, make_nadir_pose, pose_from_attitude
from terrasynth.selftest import flat_radiance, measure_shadow_length

E = 590.0


def up_hit():
    return Hit(1.0, 0, (0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("kw", [
    {"aa_samples": 0}, {"shadow_samples": 0}, {"ambient_fraction": 1.0}, {"ambient_fraction": -0.1},
    {"exposure_gain": 0.0}, {"gamma": 0.5}, {"seed": -1}, {"tile_size": 0}, {"shading_normals": "phong"},
])
def test_config_validation(kw):
    with pytest.raises(InvalidConfig):
        RenderConfig(**kw).validate()


def test_config_defaults_valid():
    cfg = RenderConfig().validate()
    assert cfg.exposure_gain is None and cfg.gamma == 1.0 and cfg.ambient_fraction == 0.05


# ---------------------------------------------------------------- shade


def test_shade_full_sun():
    L = shade(up_hit(), SunLight(0.0, 90.0, E), 1.0, 0.0, 0.0)
    assert L == pytest.approx(E / math.pi, rel=1e-15)
    assert round(L, 2) == 187.80 or abs(L - 187.82) < 0.03


def test_shade_full_shadow():
    assert shade(up_hit(), SunLight(0.0, 60.0, E), 0.7, 1.0, 0.0) == 0.0


def test_shade_lambert_ratio():
    l30 = shade(up_hit(), SunLight(0.0, 30.0, E), 0.5, 0.0, 0.0)
    l90 = shade(up_hit(), SunLight(0.0, 90.0, E), 0.5, 0.0, 0.0)
    assert l30 / l90 == pytest.approx(0.5, rel=1e-15)


def test_shade_ambient_and_backfacing():
    h = Hit(1.0, 0, (0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    sun = SunLight(0.0, 0.0, E)  # n.s = 0
    assert shade(h, sun, 1.0, 0.0, 0.05) == pytest.approx(E / math.pi * 0.05)


# ---------------------------------------------------------------- occlusion


@pytest.mark.parametrize("n", [1, 4, 64])
def test_occlusion_unobstructed(flat_scene, n):
    f = occlusion_fraction(flat_scene.bvh, flat_scene.mesh, (0.3, -0.2, 0.0), (0, 0, 1), SunLight(45.0, 30.0), n)
    assert f == 0.0


def test_occlusion_behind_wall(step_scene):
    sun = SunLight(0.0, 10.0, angular_diameter_deg=0.35)
    for n in (1, 16):
        f = occlusion_fraction(step_scene.bvh, step_scene.mesh, (0.0, -5.0, 0.0), (0, 0, 1), sun, n)
        assert f == 1.0


def test_occlusion_backfacing_counts_blocked(flat_scene):
    # geometric normal facing away from the sun: the surface cannot see it
    f = occlusion_fraction(flat_scene.bvh, flat_scene.mesh, (0.0, 0.0, 0.0), (0, 0, -1), SunLight(0.0, 45.0), 1)
    assert f == 1.0


def _penumbra_probes(step_scene, n_samples, diam=4.0, el=45.0, wall=10.0):
    r = math.radians(diam / 2.0)
    sun = SunLight(0.0, el, E, diam)
    out = []
    for k, d in enumerate(np.linspace(-0.9, 0.9, 10)):
        # ground point whose view of the wall edge sits d disk radii below the sun centre
        alpha = math.radians(el) - d * r
        dist = wall / math.tan(alpha)
        got = occlusion_fraction(step_scene.bvh, step_scene.mesh, (0.3, -dist, 0.0), (0, 0, 1), sun,
                                 n_samples, PixelRng(11, k, 3))
        out.append((got, disk_fraction_beyond(d)))
    return out


def test_penumbra_within_binomial_band(step_scene):
    n = 64
    for got, want in _penumbra_probes(step_scene, n):
        sigma = binomial_sigma(n, want) / n
        assert abs(got - want) <= max(3 * sigma, 1.0 / n)


def test_penumbra_converges(step_scene):
    for got, want in _penumbra_probes(step_scene, 256):
        assert abs(got - want) < 0.05


def test_hard_shadow_single_sample_is_binary(step_scene):
    sun = SunLight(0.0, 45.0, E, 4.0)
    vals = {occlusion_fraction(step_scene.bvh, step_scene.mesh, (0.0, -y, 0.0), (0, 0, 1), sun, 1) for y in np.linspace(8, 12, 9)}
    assert vals <= {0.0, 1.0}


# ---------------------------------------------------------------- images


def test_nadir_depth_at_principal_pixel(flat_scene):
    # principal point on a pixel centre so the centre ray is the optical axis
    intr = PerspectiveIntrinsics(65, 65, 32.0, 32.0, 32.5, 32.5)
    rad, depth = render_image(flat_scene, (intr, make_nadir_pose(0, 0, 100)), SunLight())
    assert abs(depth.depth[32, 32] - 100.0) <= 1e-6
    valid = rad.valid_mask
    assert valid[32, 32] and np.all(depth.depth[valid] >= 100.0)


def test_ortho_flat_depth_exact(flat_scene):
    cam = OrthoCamera(16, 16, 1.0, plane_z=1000.0)
    _, depth = render_image(flat_scene, cam, SunLight())
    assert np.all(depth.depth == 1000.0)


def test_zenith_flat_uniform(flat_scene):
    cam = OrthoCamera(20, 20, 1.0, plane_z=10.0)
    rad, _ = render_image(flat_scene, cam, SunLight(0.0, 90.0), RenderConfig(ambient_fraction=0.0))
    inner = rad.radiance[1:-1, 1:-1]
    assert np.ptp(inner) <= 1e-9
    assert inner[0, 0] == pytest.approx(lambert_radiance(0.5, E, 90.0), rel=1e-12)


def test_miss_pixels(flat_scene):
    # camera looking at the horizon: the top half misses
    intr = PerspectiveIntrinsics(16, 16, 8.0, 8.0, 8.0, 8.0)
    pose = pose_from_attitude(0.0, 0.0, 5.0, 0.0, 0.0, -80.0)
    rad, depth = render_image(flat_scene, (intr, pose), SunLight())
    miss = ~rad.valid_mask
    assert miss.any() and rad.valid_mask.any()
    assert np.all(depth.depth[miss] == 0.0) and np.all(rad.radiance[miss] == 0.0)
    assert np.all(depth.depth[rad.valid_mask] > 0.0)


def test_all_miss_is_not_an_error(flat_scene):
    cam = OrthoCamera(4, 4, 1.0, center_world=(500.0, 500.0), plane_z=10.0)
    rad, depth = render_image(flat_scene, cam, SunLight())
    assert not rad.valid_mask.any() and np.all(depth.depth == 0.0)


def test_ortho_plane_below_terrain(hills_scene):
    with pytest.raises(InvalidConfig):
        render_image(hills_scene, OrthoCamera(4, 4, 1.0, plane_z=hills_scene.max_elevation - 1), SunLight())


def test_bad_camera(flat_scene):
    with pytest.raises(InvalidConfig):
        render_image(flat_scene, "camera", SunLight())
    with pytest.raises(InvalidConfig):
        render_image(flat_scene, OrthoCamera(4, 4, 1.0), SunLight(), jobs=0)


def test_radiance_bound(hills_scene):
    intr = PerspectiveIntrinsics(48, 48, 24.0, 24.0, 24.0, 24.0)
    for cfg in (RenderConfig(), RenderConfig(aa_samples=3, ambient_fraction=0.3, shadow_samples=8)):
        for sun in (SunLight(30.0, 20.0), SunLight(200.0, 75.0)):
            rad, _ = render_image(hills_scene, (intr, make_nadir_pose(3.0, -4.0, 80.0)), sun, cfg)
            assert np.all(rad.radiance >= 0.0)
            assert np.all(rad.radiance <= rad.upper_bound() + 1e-9)


def test_depth_recast_consistency(hills_scene):
    intr = PerspectiveIntrinsics(24, 24, 14.0, 14.0, 12.0, 12.0)
    pose = pose_from_attitude(2.0, 1.0, 60.0, 10.0, 12.0, -4.0)
    rad, depth = render_image(hills_scene, (intr, pose), SunLight())
    for py, px in zip(*np.nonzero(rad.valid_mask)):
        hit = intersect(hills_scene.bvh, hills_scene.mesh, camera_ray(intr, pose, px, py))
        assert abs(hit.t - depth.depth[py, px]) <= 1e-6 * hit.t


def test_tiling_and_threads_bit_identical(hills_scene):
    intr = PerspectiveIntrinsics(40, 30, 20.0, 20.0, 20.0, 15.0)
    cam = (intr, make_nadir_pose(0.0, 0.0, 70.0))
    cfg = RenderConfig(aa_samples=2, shadow_samples=4, seed=99)
    ref = render_image(hills_scene, cam, SunLight(), cfg.with_(tile_size=40))
    for tile, jobs in ((7, 1), (16, 3), (64, 2)):
        rad, depth = render_image(hills_scene, cam, SunLight(), cfg.with_(tile_size=tile), jobs=jobs)
        assert rad.radiance.tobytes() == ref[0].radiance.tobytes()
        assert depth.depth.tobytes() == ref[1].depth.tobytes()


def test_seed_changes_jittered_output(hills_scene):
    cam = (PerspectiveIntrinsics(16, 16, 8.0, 8.0, 8.0, 8.0), make_nadir_pose(0.0, 0.0, 50.0))
    a, _ = render_image(hills_scene, cam, SunLight(), RenderConfig(aa_samples=4, seed=1))
    b, _ = render_image(hills_scene, cam, SunLight(), RenderConfig(aa_samples=4, seed=2))
    assert not np.array_equal(a.radiance, b.radiance)


# ---------------------------------------------------------------- photometry


def test_lambert_law_sweep():
    els = np.arange(10.0, 91.0, 10.0)
    vals = np.array([flat_radiance(e) for e in els])
    want = np.array([lambert_radiance(0.5, E, e) for e in els])
    assert np.max(np.abs(vals - want) / want) <= 1e-6


def _img(value):
    return RadianceImage(np.array([[value]], dtype=float), np.array([[True]]), E, 0.0)


def test_expose_white_and_black():
    assert expose_quantize(_img(E / math.pi))[0, 0] == 255
    assert expose_quantize(_img(0.0))[0, 0] == 0


def test_expose_gamma_and_gain():
    half = _img(E / math.pi / 2)
    assert expose_quantize(half)[0, 0] == 128
    assert expose_quantize(half, RenderConfig(gamma=2.2))[0, 0] == round(0.5 ** (1 / 2.2) * 255)
    assert expose_quantize(half, RenderConfig(exposure_gain=2 * math.pi / E))[0, 0] == 255


@given(st.floats(0, 400), st.floats(0, 400), st.sampled_from([1.0, 1.8, 2.2]))
def test_expose_monotone(a, b, gamma):
    lo, hi = min(a, b), max(a, b)
    cfg = RenderConfig(gamma=gamma)
    assert expose_quantize(_img(lo), cfg)[0, 0] <= expose_quantize(_img(hi), cfg)[0, 0]


# ---------------------------------------------------------------- ortho maps


@pytest.mark.parametrize("el", [30.0, 45.0, 60.0])
def test_step_shadow_length(step_scene, el):
    lengths = measure_shadow_length(step_scene, el, gsd=0.25)
    assert np.all(np.abs(lengths - shadow_length(10.0, el)) <= 2 * 0.25)


def test_zenith_no_shadow_band(step_scene):
    cam = OrthoCamera(32, 64, 0.25, (0.0, 0.0), 20.0)
    cfg = RenderConfig(ambient_fraction=0.0, shadow_samples=1, shading_normals="flat")
    gray, _ = render_ortho_map(step_scene, cam, SunLight(0.0, 90.0, angular_diameter_deg=0.0), cfg)
    # every pixel except the one-post-wide wall face is lit identically
    rows_y = 8.0 - (np.arange(64) + 0.5) * 0.25
    flat_rows = (rows_y > 0.0) | (rows_y < -0.125)
    lit = gray[flat_rows]
    assert lit.max() - lit.min() <= 1
    assert lit.min() == round(0.5 * 255)


def test_ortho_map_tile_determinism(hills_scene):
    cam = OrthoCamera(48, 48, 1.3, plane_z=hills_scene.max_elevation + 5)
    a, da = render_ortho_map(hills_scene, cam, SunLight(), RenderConfig(tile_size=16))
    b, db = render_ortho_map(hills_scene, cam, SunLight(), RenderConfig(tile_size=48))
    assert a.tobytes() == b.tobytes() and da.depth.tobytes() == db.depth.tobytes()
    assert a.dtype == np.uint8
