"""Deterministic tiled renderer.

Each pixel averages ``aa_samples`` rays (pixel centre when ``aa_samples`` is
1, otherwise jittered).  A hit is shaded with a Lambertian lobe under the
sun; sun visibility is estimated with shadow rays spread uniformly over the
solar disk.  All randomness comes from :func:`terrasynth.rng.uniform`, keyed
by pixel and sample, so tiling and thread count never change the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .accel import STACK_SIZE, Bvh, Hit, any_hit, build_bvh, closest_hit
from .ingest import Heightfield, OrthoTexture
from .rng import uniform
from .scene import OrthoCamera, PerspectiveIntrinsics, Pose, SunLight, perspective_direction
from .terrain import TriangleMesh, bilinear_clamped, triangulate

__all__ = [
    "InvalidConfig",
    "RenderConfig",
    "SceneBundle",
    "RadianceImage",
    "DepthImage",
    "PixelRng",
    "shade",
    "occlusion_fraction",
    "render_image",
    "expose_quantize",
    "render_ortho_map",
]


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    aa_samples: int = 1
    shadow_samples: int = 4
    ambient_fraction: float = 0.05
    exposure_gain: float | None = None  # None -> pi / irradiance
    gamma: float = 1.0
    seed: int = 0
    tile_size: int = 64
    shading_normals: str = "smooth"

    def validate(self) -> "RenderConfig":
        if self.aa_samples < 1:
            raise InvalidConfig("aa_samples must be >= 1")
        if self.shadow_samples < 1:
            raise InvalidConfig("shadow_samples must be >= 1")
        if not (0.0 <= self.ambient_fraction < 1.0):
            raise InvalidConfig("ambient_fraction must lie in [0, 1)")
        if self.exposure_gain is not None and not self.exposure_gain > 0:
            raise InvalidConfig("exposure_gain must be positive")
        if not self.gamma >= 1.0:
            raise InvalidConfig("gamma must be >= 1")
        if not (0 <= int(self.seed) < 1 << 64):
            raise InvalidConfig("seed must be a 64-bit unsigned integer")
        if self.tile_size < 1:
            raise InvalidConfig("tile_size must be >= 1")
        if self.shading_normals not in ("smooth", "flat"):
            raise InvalidConfig("shading_normals must be 'smooth' or 'flat'")
        return self

    def with_(self, **kw) -> "RenderConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """Everything a render reads.  Immutable, so renders may share it across threads."""

    heightfield: Heightfield
    mesh: TriangleMesh
    bvh: Bvh
    texture: OrthoTexture | None = None
    constant_albedo: float = 0.5

    @classmethod
    def build(
        cls,
        heightfield: Heightfield,
        texture: OrthoTexture | None = None,
        leaf_size: int = 4,
        constant_albedo: float = 0.5,
    ) -> "SceneBundle":
        mesh = triangulate(heightfield)
        return cls(heightfield, mesh, build_bvh(mesh, leaf_size), texture, constant_albedo)

    @property
    def shadow_t_min(self) -> float:
        return 1e-4 * self.heightfield.post_spacing

    @property
    def max_elevation(self) -> float:
        return float(self.mesh.vertices[:, 2].max())


@dataclass(frozen=True, eq=False)
class RadianceImage:
    radiance: np.ndarray  # W m^-2 sr^-1
    valid_mask: np.ndarray
    irradiance: float
    ambient_fraction: float

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    def upper_bound(self) -> float:
        """Largest radiance a unit-albedo Lambertian surface can reach here."""
        return self.irradiance / math.pi * (1.0 + self.ambient_fraction)


@dataclass(frozen=True, eq=False)
class DepthImage:
    depth: np.ndarray  # metres along the ray, 0.0 = miss

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class PixelRng:
    """Key of a pixel's random stream; ``sample`` offsets the sample index."""

    seed: int = 0
    x: int = 0
    y: int = 0
    sample: int = 0


def shade(hit: Hit, sun: SunLight, albedo: float, occlusion_fraction: float, ambient_fraction: float) -> float:
    """Lambertian radiance leaving ``hit`` toward any viewer."""
    n_dot_s = max(0.0, float(np.dot(hit.normal, sun.direction)))
    return albedo / math.pi * sun.irradiance * (n_dot_s * (1.0 - occlusion_fraction) + ambient_fraction)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


_GOLDEN_FRAC = 0.6180339887498949


@njit(cache=True, nogil=True, inline="always")
def _basis(sx, sy, sz):
    # Duff et al. 2017 branchless orthonormal basis
    sign = 1.0 if sz >= 0.0 else -1.0
    a = -1.0 / (sign + sz)
    b = sx * sy * a
    return (1.0 + sign * sx * sx * a, sign * b, -sign * sx), (b, sign + sy * sy * a, -sy)


@njit(cache=True, nogil=True, inline="always")
def _concentric(u1, u2):
    a = 2.0 * u1 - 1.0
    b = 2.0 * u2 - 1.0
    if a == 0.0 and b == 0.0:
        return 0.0, 0.0
    if abs(a) > abs(b):
        r = a
        phi = (math.pi / 4.0) * (b / a)
    else:
        r = b
        phi = (math.pi / 2.0) - (math.pi / 4.0) * (a / b)
    return r * math.cos(phi), r * math.sin(phi)


@njit(cache=True, nogil=True)
def occlusion_kernel(
    nmin, nmax, left, right, start, count, order, eps, verts, tris,
    px, py, pz, ngx, ngy, ngz, sx, sy, sz, cos_half, n_samples, t_min,
    seed, x, y, base_index, stack,
):
    """Fraction of sun-disk sample directions blocked as seen from (px, py, pz)."""
    if n_samples == 1 or cos_half >= 1.0:
        if ngx * sx + ngy * sy + ngz * sz <= 0.0:
            return 1.0
        hit = any_hit(nmin, nmax, left, right, start, count, order, eps, verts, tris,
                      px, py, pz, sx, sy, sz, t_min, np.inf, stack)
        return 1.0 if hit else 0.0
    t1, t2 = _basis(sx, sy, sz)
    blocked = 0
    one_minus = 1.0 - cos_half
    # randomly shifted rank-1 (Fibonacci) lattice: each point is uniform, the set is well spread
    xi1 = uniform(seed, x, y, base_index, 2)
    xi2 = uniform(seed, x, y, base_index, 3)
    for k in range(n_samples):
        u1 = ((k + 0.5) / n_samples + xi1) % 1.0
        u2 = (k * _GOLDEN_FRAC + xi2) % 1.0
        dx, dy = _concentric(u1, u2)
        r2 = dx * dx + dy * dy
        ct = 1.0 - r2 * one_minus
        st = math.sqrt(max(0.0, 1.0 - ct * ct))
        if r2 > 0.0:
            r = math.sqrt(r2)
            ex = (dx * t1[0] + dy * t2[0]) / r
            ey = (dx * t1[1] + dy * t2[1]) / r
            ez = (dx * t1[2] + dy * t2[2]) / r
        else:
            ex = 0.0
            ey = 0.0
            ez = 0.0
        wx = ct * sx + st * ex
        wy = ct * sy + st * ey
        wz = ct * sz + st * ez
        if ngx * wx + ngy * wy + ngz * wz <= 0.0:
            blocked += 1
            continue
        if any_hit(nmin, nmax, left, right, start, count, order, eps, verts, tris,
                   px, py, pz, wx, wy, wz, t_min, np.inf, stack):
            blocked += 1
    return blocked / n_samples


@njit(cache=True, nogil=True)
def _render_tile(
    x0, y0, x1, y1,
    ortho, R, t, fx, fy, cx, cy, ocx, ocy, gsd, width, height, plane_z,
    nmin, nmax, left, right, start, count, order, eps,
    verts, tris, face_n, vert_n, smooth,
    albedo_img, has_tex, tox, toy, tscale, const_albedo,
    sx, sy, sz, cos_half, irradiance, ambient, n_shadow, shadow_tmin,
    seed, aa, out_rad, out_depth, out_valid,
):
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    tstack = np.empty(STACK_SIZE)
    inv_pi = 1.0 / math.pi
    for py in range(y0, y1):
        for px in range(x0, x1):
            sum_l = 0.0
            sum_d = 0.0
            nh = 0
            for s in range(aa):
                if aa == 1:
                    su = 0.5
                    sv = 0.5
                else:
                    su = uniform(seed, px, py, s, 0)
                    sv = uniform(seed, px, py, s, 1)
                if ortho:
                    ox = ocx + (px + su - width / 2.0) * gsd
                    oy = ocy - (py + sv - height / 2.0) * gsd
                    oz = plane_z
                    dx = 0.0
                    dy = 0.0
                    dz = -1.0
                else:
                    ox = t[0]
                    oy = t[1]
                    oz = t[2]
                    dx, dy, dz = perspective_direction(R, fx, fy, cx, cy, px + su, py + sv)
                tri, th, b0, b1, b2, _ = closest_hit(
                    nmin, nmax, left, right, start, count, order, eps, verts, tris,
                    ox, oy, oz, dx, dy, dz, 0.0, np.inf, stack, tstack,
                )
                if tri < 0:
                    continue
                i0 = tris[tri, 0]
                i1 = tris[tri, 1]
                i2 = tris[tri, 2]
                hx = b0 * verts[i0, 0] + b1 * verts[i1, 0] + b2 * verts[i2, 0]
                hy = b0 * verts[i0, 1] + b1 * verts[i1, 1] + b2 * verts[i2, 1]
                # relative form keeps level triangles exact
                hz = verts[i0, 2] + b1 * (verts[i1, 2] - verts[i0, 2]) + b2 * (verts[i2, 2] - verts[i0, 2])
                ngx = face_n[tri, 0]
                ngy = face_n[tri, 1]
                ngz = face_n[tri, 2]
                if smooth:
                    nx = b0 * vert_n[i0, 0] + b1 * vert_n[i1, 0] + b2 * vert_n[i2, 0]
                    ny = b0 * vert_n[i0, 1] + b1 * vert_n[i1, 1] + b2 * vert_n[i2, 1]
                    nz = b0 * vert_n[i0, 2] + b1 * vert_n[i1, 2] + b2 * vert_n[i2, 2]
                    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
                    nx /= nn
                    ny /= nn
                    nz /= nn
                else:
                    nx = ngx
                    ny = ngy
                    nz = ngz
                if has_tex:
                    alb = bilinear_clamped(albedo_img, (toy - hy) / tscale, (hx - tox) / tscale)
                else:
                    alb = const_albedo
                ndots = nx * sx + ny * sy + nz * sz
                direct = 0.0
                if ndots > 0.0:
                    occ = occlusion_kernel(
                        nmin, nmax, left, right, start, count, order, eps, verts, tris,
                        hx, hy, hz, ngx, ngy, ngz, sx, sy, sz, cos_half, n_shadow, shadow_tmin,
                        seed, px, py, s * n_shadow, stack,
                    )
                    direct = ndots * (1.0 - occ)
                sum_l += alb * inv_pi * irradiance * (direct + ambient)
                if ortho:
                    sum_d += plane_z - hz
                else:
                    sum_d += th
                nh += 1
            out_rad[py, px] = sum_l / aa
            if nh > 0:
                out_depth[py, px] = sum_d / nh
                out_valid[py, px] = True
            else:
                out_depth[py, px] = 0.0
                out_valid[py, px] = False


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def occlusion_fraction(
    bvh: Bvh,
    mesh: TriangleMesh,
    point,
    normal,
    sun: SunLight,
    n_samples: int,
    pixel_rng: PixelRng = PixelRng(),
    t_min: float | None = None,
) -> float:
    """Fraction of the sun disk hidden from ``point`` (``normal`` is the geometric normal)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    s = sun.direction
    if t_min is None:
        t_min = 1e-4 * mesh.post_spacing
    cos_half = math.cos(math.radians(sun.angular_diameter_deg) / 2.0)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    return float(
        occlusion_kernel(
            *bvh.kernel_args(), mesh.vertices, mesh.triangles,
            *map(float, point), *map(float, normal), *map(float, s), cos_half, int(n_samples), float(t_min),
            np.uint64(pixel_rng.seed), pixel_rng.x, pixel_rng.y, pixel_rng.sample, stack,
        )
    )


def _tiles(width: int, height: int, tile: int):
    for y0 in range(0, height, tile):
        for x0 in range(0, width, tile):
            yield x0, y0, min(x0 + tile, width), min(y0 + tile, height)


def render_image(
    scene: SceneBundle,
    camera,
    sun: SunLight,
    cfg: RenderConfig = RenderConfig(),
    jobs: int = 1,
) -> tuple[RadianceImage, DepthImage]:
    """Render radiance and depth for a perspective ``(intrinsics, pose)`` pair or an :class:`OrthoCamera`."""
    cfg.validate()
    if jobs < 1:
        raise InvalidConfig("jobs must be >= 1")
    if isinstance(camera, OrthoCamera):
        if not camera.plane_z > scene.max_elevation:
            raise InvalidConfig(f"ortho plane_z {camera.plane_z} must exceed max terrain elevation {scene.max_elevation}")
        width, height = camera.width, camera.height
        R = np.eye(3)
        tvec = np.zeros(3)
        persp = (1.0, 1.0, 0.5, 0.5)
        ortho = (camera.center_world[0], camera.center_world[1], camera.gsd, camera.plane_z)
        is_ortho = True
    else:
        try:
            intr, pose = camera
        except (TypeError, ValueError) as exc:
            raise InvalidConfig("camera must be an OrthoCamera or (PerspectiveIntrinsics, Pose)") from exc
        if not isinstance(intr, PerspectiveIntrinsics) or not isinstance(pose, Pose):
            raise InvalidConfig("camera must be an OrthoCamera or (PerspectiveIntrinsics, Pose)")
        width, height = intr.width, intr.height
        R = np.ascontiguousarray(pose.R_WC)
        tvec = np.ascontiguousarray(pose.t_WC)
        persp = (intr.fx, intr.fy, intr.cx, intr.cy)
        ortho = (0.0, 0.0, 1.0, 0.0)
        is_ortho = False

    rad = np.zeros((height, width))
    depth = np.zeros((height, width))
    valid = np.zeros((height, width), dtype=np.bool_)
    s = sun.direction
    cos_half = math.cos(math.radians(sun.angular_diameter_deg) / 2.0)
    tex = scene.texture
    if tex is not None:
        albedo_img, tox, toy, tscale = tex.albedo, tex.origin_world[0], tex.origin_world[1], tex.pixel_scale
    else:
        albedo_img, tox, toy, tscale = np.zeros((1, 1)), 0.0, 0.0, 1.0
    mesh = scene.mesh
    fixed = (
        is_ortho, R, tvec, *persp, ortho[0], ortho[1], ortho[2], float(width), float(height), ortho[3],
        *scene.bvh.kernel_args(),
        mesh.vertices, mesh.triangles, mesh.face_normals, mesh.vertex_normals, cfg.shading_normals == "smooth",
        albedo_img, tex is not None, tox, toy, tscale, float(scene.constant_albedo),
        float(s[0]), float(s[1]), float(s[2]), cos_half, float(sun.irradiance), float(cfg.ambient_fraction),
        int(cfg.shadow_samples), scene.shadow_t_min,
        np.uint64(cfg.seed), int(cfg.aa_samples), rad, depth, valid,
    )

    def run(tile):
        _render_tile(*tile, *fixed)

    tiles = list(_tiles(width, height, int(cfg.tile_size)))
    if jobs == 1:
        for tile in tiles:
            run(tile)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run, tiles))
    return (
        RadianceImage(rad, valid, float(sun.irradiance), float(cfg.ambient_fraction)),
        DepthImage(depth),
    )


def expose_quantize(img: RadianceImage, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Linear exposure, optional gamma, 8-bit rounding."""
    gain = cfg.exposure_gain if cfg.exposure_gain is not None else math.pi / img.irradiance
    v = np.clip(gain * img.radiance, 0.0, 1.0)
    if cfg.gamma > 1.0:
        v = v ** (1.0 / cfg.gamma)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def render_ortho_map(
    scene: SceneBundle,
    camera: OrthoCamera,
    sun: SunLight,
    cfg: RenderConfig = RenderConfig(),
    jobs: int = 1,
) -> tuple[np.ndarray, DepthImage]:
    rad, depth = render_image(scene, camera, sun, cfg, jobs=jobs)
    return expose_quantize(rad, cfg), depth
