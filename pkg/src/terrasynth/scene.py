"""World/camera frames, camera models, the sun, and altitude placement.

World frame: East-North-Up, origin at the centre of the terrain extent.
Camera frame: X right along the image width, Y down along the image height,
Z along the optical axis (toward the terrain for a nadir camera).

``Pose.R_WC`` is camera-to-world: column i is camera axis i expressed in the
world frame, so ``p_W = R_WC @ p_C + t_WC``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .accel import STACK_SIZE, Bvh, Ray, closest_hit
from .terrain import TriangleMesh

__all__ = [
    "ElevationOutOfRange",
    "PixelOutOfRange",
    "NoTerrainBelow",
    "Pose",
    "PerspectiveIntrinsics",
    "OrthoCamera",
    "SunLight",
    "sun_direction",
    "make_nadir_pose",
    "pose_from_attitude",
    "place_camera",
    "camera_ray",
    "ortho_ray",
    "unproject",
    "NADIR_R_WC",
    "DEFAULT_IRRADIANCE",
    "DEFAULT_ANGULAR_DIAMETER",
]

DEFAULT_IRRADIANCE = 590.0  # W/m^2
DEFAULT_ANGULAR_DIAMETER = 0.35  # degrees

# camera X = East, Y = South, Z = Down; image up is North
NADIR_R_WC = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
NADIR_R_WC.flags.writeable = False


class ElevationOutOfRange(ValueError):
    pass


class PixelOutOfRange(ValueError):
    pass


class NoTerrainBelow(RuntimeError):
    pass


def cos_sin_deg(angle: float) -> tuple[float, float]:
    """(cos, sin) of an angle in degrees, exact at multiples of 90 degrees."""
    a = math.fmod(float(angle), 360.0)
    if a < 0.0:
        a += 360.0
    exact = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if a in exact:
        return exact[a]
    r = math.radians(a)
    return math.cos(r), math.sin(r)


def sun_direction(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector toward the sun.  Azimuth is clockwise from North seen from above."""
    if not (0.0 <= elevation_deg <= 90.0):
        raise ElevationOutOfRange(f"sun elevation must lie in [0, 90], got {elevation_deg}")
    ca, sa = cos_sin_deg(azimuth_deg)
    ce, se = cos_sin_deg(elevation_deg)
    d = np.array([sa * ce, ca * ce, se])
    return d / np.linalg.norm(d) + 0.0  # + 0.0 clears signed zeros


@dataclass(frozen=True)
class SunLight:
    azimuth_deg: float = 180.0
    elevation_deg: float = 40.0
    irradiance: float = DEFAULT_IRRADIANCE
    angular_diameter_deg: float = DEFAULT_ANGULAR_DIAMETER

    def __post_init__(self) -> None:
        if not (0.0 <= self.elevation_deg <= 90.0):
            raise ElevationOutOfRange(f"sun elevation must lie in [0, 90], got {self.elevation_deg}")
        if not self.irradiance > 0.0:
            raise ValueError("irradiance must be positive")
        if not self.angular_diameter_deg >= 0.0:
            raise ValueError("angular diameter must be >= 0")

    @property
    def direction(self) -> np.ndarray:
        return sun_direction(self.azimuth_deg, self.elevation_deg)


@dataclass(frozen=True, eq=False)
class Pose:
    R_WC: np.ndarray
    t_WC: np.ndarray

    def __post_init__(self) -> None:
        R = np.array(self.R_WC, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t_WC, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R_WC", R)
        object.__setattr__(self, "t_WC", t)

    def world_to_camera(self, p_w) -> np.ndarray:
        return (np.asarray(p_w, dtype=np.float64) - self.t_WC) @ self.R_WC

    def camera_to_world(self, p_c) -> np.ndarray:
        return np.asarray(p_c, dtype=np.float64) @ self.R_WC.T + self.t_WC

    def is_rotation(self, tol: float = 1e-9) -> bool:
        R = self.R_WC
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)


def make_nadir_pose(x: float, y: float, z: float) -> Pose:
    return Pose(NADIR_R_WC, (x, y, z))


def _rot_z(deg: float) -> np.ndarray:
    c, s = cos_sin_deg(deg)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(deg: float) -> np.ndarray:
    c, s = cos_sin_deg(deg)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(deg: float) -> np.ndarray:
    c, s = cos_sin_deg(deg)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def attitude_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Camera-to-world rotation for an attitude relative to the nadir frame (degrees)."""
    return NADIR_R_WC @ _rot_z(yaw) @ _rot_y(pitch) @ _rot_x(roll)


def pose_from_attitude(x: float, y: float, z: float, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> Pose:
    """Pose whose camera is rotated from nadir by yaw (about camera Z), pitch (Y), roll (X)."""
    return Pose(attitude_matrix(yaw, pitch, roll), (x, y, z))


def place_camera(
    bvh: Bvh,
    mesh: TriangleMesh,
    x: float,
    y: float,
    agl: float,
    attitude: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> Pose:
    """Put the camera ``agl`` metres above the terrain surface found by a vertical ray at (x, y)."""
    if not agl > 0.0:
        raise ValueError(f"altitude above ground must be positive, got {agl}")
    z_start = float(mesh.vertices[:, 2].max()) + 1.0
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    tstack = np.empty(STACK_SIZE)
    tri, _t, b0, b1, b2, _ = closest_hit(
        *bvh.kernel_args(), mesh.vertices, mesh.triangles,
        float(x), float(y), z_start, 0.0, 0.0, -1.0, 0.0, np.inf, stack, tstack,
    )
    if tri < 0:
        raise NoTerrainBelow(f"no terrain below ({x}, {y})")
    z0, z1, z2 = mesh.vertices[mesh.triangles[tri], 2]
    # exact at vertices and on level triangles
    if b1 == 1.0:
        z_hit = z1
    elif b2 == 1.0:
        z_hit = z2
    else:
        z_hit = z0 + b1 * (z1 - z0) + b2 * (z2 - z0)
    return pose_from_attitude(x, y, z_hit + agl, *attitude)


@dataclass(frozen=True)
class PerspectiveIntrinsics:
    width: int = 512
    height: int = 512
    fx: float = 256.0
    fy: float = 256.0
    cx: float = 256.0
    cy: float = 256.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_hfov(cls, width: int, height: int, hfov_deg: float) -> "PerspectiveIntrinsics":
        f = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(width, height, f, f, width / 2.0, height / 2.0)

    @property
    def hfov_deg(self) -> float:
        return math.degrees(2.0 * math.atan((self.width / 2.0) / self.fx))

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class OrthoCamera:
    width: int
    height: int
    gsd: float
    center_world: tuple[float, float] = (0.0, 0.0)
    plane_z: float = 1000.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not self.gsd > 0:
            raise ValueError("gsd must be positive")
        object.__setattr__(self, "center_world", (float(self.center_world[0]), float(self.center_world[1])))

    @staticmethod
    def size_for_extent(extent_x: float, extent_y: float, gsd: float) -> tuple[int, int]:
        """Pixel dimensions (width, height) that cover an extent at ``gsd``."""
        return int(math.floor(extent_x / gsd + 0.5)), int(math.floor(extent_y / gsd + 0.5))


@njit(cache=True, nogil=True)
def perspective_direction(R, fx, fy, cx, cy, u, v):
    """World-frame unit direction through image point (u, v) in pixel units."""
    a = (u - cx) / fx
    b = (v - cy) / fy
    n = math.sqrt(a * a + b * b + 1.0)
    a /= n
    b /= n
    c = 1.0 / n
    return (
        R[0, 0] * a + R[0, 1] * b + R[0, 2] * c,
        R[1, 0] * a + R[1, 1] * b + R[1, 2] * c,
        R[2, 0] * a + R[2, 1] * b + R[2, 2] * c,
    )


def _check_pixel(px, py, width, height) -> None:
    if not (0 <= px < width and 0 <= py < height):
        raise PixelOutOfRange(f"pixel ({px}, {py}) outside {width}x{height} image")


def camera_ray(intr: PerspectiveIntrinsics, pose: Pose, px: int, py: int, subpixel=(0.5, 0.5)):
    """Ray from the camera centre through (px + sx, py + sy)."""
    _check_pixel(px, py, intr.width, intr.height)
    d = perspective_direction(pose.R_WC, intr.fx, intr.fy, intr.cx, intr.cy, px + subpixel[0], py + subpixel[1])
    return Ray(tuple(pose.t_WC.tolist()), d)


def ortho_origin(cam: OrthoCamera, u: float, v: float) -> tuple[float, float, float]:
    return (
        cam.center_world[0] + (u - cam.width / 2.0) * cam.gsd,
        cam.center_world[1] - (v - cam.height / 2.0) * cam.gsd,
        cam.plane_z,
    )


def ortho_ray(cam: OrthoCamera, px: int, py: int, subpixel=(0.5, 0.5)):
    """Downward ray for orthographic pixel (px, py); row 0 is the north edge."""
    _check_pixel(px, py, cam.width, cam.height)
    return Ray(ortho_origin(cam, px + subpixel[0], py + subpixel[1]), (0.0, 0.0, -1.0))


def unproject(intr: PerspectiveIntrinsics, pose: Pose, depth: np.ndarray) -> np.ndarray:
    """World points for every pixel centre of a ray-distance depth image, shape (H, W, 3).

    Pixels with depth 0 (misses) come back as NaN.
    """
    depth = np.asarray(depth, dtype=np.float64)
    v, u = np.mgrid[0 : depth.shape[0], 0 : depth.shape[1]]
    a = (u + 0.5 - intr.cx) / intr.fx
    b = (v + 0.5 - intr.cy) / intr.fy
    d_c = np.stack([a, b, np.ones_like(a)], axis=-1)
    d_c /= np.linalg.norm(d_c, axis=-1, keepdims=True)
    pts = pose.t_WC + depth[..., None] * (d_c @ pose.R_WC.T)
    pts[depth <= 0.0] = np.nan
    return pts
