"""Small embedded oracle suites run by ``terrasynth selftest``.

Each suite checks the engine against something computed independently of it:
brute-force intersection, the cosine law, and shadow-length trigonometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fixtures
from .accel import build_bvh, intersect_batch, intersect_brute_batch
from .ingest import Heightfield
from .render import RenderConfig, SceneBundle, render_image
from .scene import OrthoCamera, SunLight
from .terrain import triangulate


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_rays(h: Heightfield, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Rays from above the terrain toward random points around it (some miss)."""
    half_x, half_y = h.extent_x / 2.0, h.extent_y / 2.0
    zmax = float(np.nanmax(h.elevations))
    zmin = float(np.nanmin(h.elevations))
    org = np.column_stack([
        rng.uniform(-1.5 * half_x, 1.5 * half_x, n),
        rng.uniform(-1.5 * half_y, 1.5 * half_y, n),
        rng.uniform(zmax + 1.0, zmax + 50.0, n),
    ])
    tgt = np.column_stack([
        rng.uniform(-1.2 * half_x, 1.2 * half_x, n),
        rng.uniform(-1.2 * half_y, 1.2 * half_y, n),
        rng.uniform(zmin - 1.0, zmax, n),
    ])
    d = tgt - org
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return org, d


def bvh_disagreements(h: Heightfield, n_rays: int, rng: np.random.Generator) -> tuple[int, float]:
    """(rays whose hit/miss or triangle differ, worst relative t difference) for BVH vs brute force."""
    mesh = triangulate(h)
    bvh = build_bvh(mesh)
    org, d = random_rays(h, n_rays, rng)
    a = intersect_batch(bvh, mesh, org, d)
    b = intersect_brute_batch(mesh, org, d)
    bad = int(np.count_nonzero(a.triangle != b.triangle))
    both = a.hit & b.hit
    rel = 0.0
    if both.any():
        rel = float(np.max(np.abs(a.t[both] - b.t[both]) / np.maximum(np.abs(b.t[both]), 1e-300)))
    return bad, rel


def suite_bvh(n_fields: int = 5, n_rays: int = 200, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    bad, worst = 0, 0.0
    for _ in range(n_fields):
        h = Heightfield.from_array(rng.normal(0.0, 2.0, (17, 17)), float(rng.uniform(0.5, 2.0)))
        b, r = bvh_disagreements(h, n_rays, rng)
        bad += b
        worst = max(worst, r)
    ok = bad == 0 and worst <= 1e-9
    return SuiteResult("bvh-equivalence", ok, f"{n_fields * n_rays} rays, {bad} mismatches, max rel dt {worst:.2e}")


def flat_radiance(elevation_deg: float, albedo: float = 0.5, size: int = 4) -> float:
    """Centre radiance of a small ortho render of flat constant-albedo terrain, no ambient."""
    scene = SceneBundle.build(fixtures.flat(9, 1.0), constant_albedo=albedo)
    cam = OrthoCamera(size, size, 0.5, plane_z=100.0)
    cfg = RenderConfig(ambient_fraction=0.0, shadow_samples=1)
    rad, _ = render_image(scene, cam, SunLight(180.0, elevation_deg, angular_diameter_deg=0.0), cfg)
    return float(rad.radiance[size // 2, size // 2])


def suite_lambert(elevations=(10.0, 30.0, 50.0, 70.0, 90.0)) -> SuiteResult:
    vals = np.array([flat_radiance(e) for e in elevations])
    sines = np.sin(np.radians(elevations))
    k = float(vals @ sines / (sines @ sines))
    resid = float(np.max(np.abs(vals - k * sines) / (k * sines)))
    expected_k = 0.5 / math.pi * 590.0
    ok = resid <= 1e-6 and abs(k - expected_k) <= 1e-9 * expected_k
    return SuiteResult("lambert-law", ok, f"k={k:.6f} (expect {expected_k:.6f}), max rel residual {resid:.2e}")


def step_scene(wall_height: float = 10.0, n: int = 321, post: float = 0.125) -> SceneBundle:
    return SceneBundle.build(fixtures.step(n, post, wall_height), constant_albedo=0.5)


def measure_shadow_length(scene: SceneBundle, elevation_deg: float, gsd: float = 0.25, span: float = 19.0) -> np.ndarray:
    """Per-column shadow length south of the step edge (y = 0) with the sun due north.

    Renders an ortho strip whose top row starts exactly at y = 0 and counts, in
    each column, the consecutive dark pixels from the edge southward.
    """
    width = 32
    height = int(round(span / gsd))
    cam = OrthoCamera(width, height, gsd, center_world=(0.0, -height * gsd / 2.0), plane_z=scene.max_elevation + 5.0)
    cfg = RenderConfig(ambient_fraction=0.0, shadow_samples=1, shading_normals="flat")
    sun = SunLight(0.0, elevation_deg, angular_diameter_deg=0.0)
    rad, _ = render_image(scene, cam, sun, cfg)
    lit = scene.constant_albedo / math.pi * sun.irradiance * math.sin(math.radians(elevation_deg))
    dark = rad.radiance < 0.5 * lit
    # first lit row in each column; every row dark -> full strip
    first_lit = np.where(dark.all(axis=0), height, np.argmin(dark, axis=0))
    return first_lit * gsd


def suite_shadow(elevations=(30.0, 45.0, 60.0), wall_height: float = 10.0, gsd: float = 0.25) -> SuiteResult:
    scene = step_scene(wall_height)
    worst = 0.0
    for el in elevations:
        lengths = measure_shadow_length(scene, el, gsd)
        expected = wall_height / math.tan(math.radians(el))
        worst = max(worst, float(np.max(np.abs(lengths - expected))))
    ok = worst <= 2.0 * gsd
    return SuiteResult("shadow-geometry", ok, f"max |length - h/tan(EL)| = {worst:.3f} m (limit {2 * gsd:.3f})")


SUITES = {"bvh": suite_bvh, "lambert": suite_lambert, "shadow": suite_shadow}


def run_all() -> list[SuiteResult]:
    return [fn() for fn in SUITES.values()]
