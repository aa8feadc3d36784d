"""Heightfield to triangle mesh, resolution resampling and bilinear queries.

The mesh splits every fully valid grid cell along its NW->SE diagonal into two
triangles wound counter-clockwise seen from above.  ``height_at`` is a
bilinear interpolant that is independent of that choice, so it agrees with
the mesh exactly at posts only; ``mesh_height_at`` follows the diagonal split
and agrees with the mesh everywhere.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .ingest import Heightfield, OrthoTexture

__all__ = [
    "FractionOutOfRange",
    "DegenerateGrid",
    "EmptyMesh",
    "Missing",
    "TriangleMesh",
    "Aabb",
    "resample",
    "resampled_shape",
    "triangulate",
    "height_at",
    "heights_at",
    "mesh_height_at",
    "sample_albedo",
    "world_bounds",
]


class FractionOutOfRange(ValueError):
    pass


class DegenerateGrid(ValueError):
    pass


class EmptyMesh(ValueError):
    pass


class Missing(enum.Enum):
    """Non-elevation outcomes of a height query."""

    NODATA = "NODATA"
    OUT_OF_BOUNDS = "OOB"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64, CCW from above
    face_normals: np.ndarray  # (T, 3) unit
    vertex_normals: np.ndarray  # (V, 3) unit, area weighted
    post_spacing: float = 1.0

    def __len__(self) -> int:
        return len(self.triangles)

    def triangle_vertices(self, index: int) -> np.ndarray:
        return self.vertices[self.triangles[index]]


@dataclass(frozen=True, eq=False)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    def contains(self, other: "Aabb") -> bool:
        return bool(np.all(self.min <= other.min) and np.all(other.max <= self.max))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _bilinear_grid(h: Heightfield, fi: np.ndarray, fj: np.ndarray) -> np.ndarray:
    """Bilinear lookup at fractional (row, col) indices inside the grid; NaN if a weighted corner is nodata."""
    z = h.elevations
    i0 = np.minimum(np.floor(fi).astype(np.int64), h.rows - 1)
    j0 = np.minimum(np.floor(fj).astype(np.int64), h.cols - 1)
    wi = fi - i0
    wj = fj - j0
    i1 = np.minimum(i0 + 1, h.rows - 1)
    j1 = np.minimum(j0 + 1, h.cols - 1)
    z00, z01, z10, z11 = z[i0, j0], z[i0, j1], z[i1, j0], z[i1, j1]
    # corners carrying zero weight must not spread nodata
    z01 = np.where(wj == 0.0, 0.0, z01)
    z10 = np.where(wi == 0.0, 0.0, z10)
    z11 = np.where((wi == 0.0) | (wj == 0.0), 0.0, z11)
    top = np.where(wj == 0.0, z00, z00 * (1.0 - wj) + z01 * wj)
    bot = np.where(wj == 0.0, z10, z10 * (1.0 - wj) + z11 * wj)
    out = np.where(wi == 0.0, top, top * (1.0 - wi) + bot * wi)
    return out


def resampled_shape(rows: int, cols: int, post_spacing: float, fraction: float) -> tuple[int, int, float]:
    """(rows, cols, post_spacing) that :func:`resample` produces, without touching any data."""
    if not (0.0 < fraction <= 1.0):
        raise FractionOutOfRange(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return rows, cols, post_spacing
    ex, ey = (cols - 1) * post_spacing, (rows - 1) * post_spacing
    if cols >= rows:
        n_cols = max(2, _round_half_up(cols * fraction))
        post = ex / (n_cols - 1)
        n_rows = max(2, int(math.floor(ey / post + 1e-9)) + 1) if rows > 1 else 1
    else:
        n_rows = max(2, _round_half_up(rows * fraction))
        post = ey / (n_rows - 1)
        n_cols = max(2, int(math.floor(ex / post + 1e-9)) + 1) if cols > 1 else 1
    return n_rows, n_cols, post


def resample(h: Heightfield, fraction: float) -> Heightfield:
    """Resample to ``fraction`` of the original resolution, preserving the extent.

    The longer axis fixes the new post spacing; the other axis gets the largest
    post count whose extent does not exceed the original.
    """
    if not (0.0 < fraction <= 1.0):
        raise FractionOutOfRange(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return Heightfield(h.post_spacing, h.elevations, h.nodata_mask, h.nodata_value, h.source)
    rows, cols, post = resampled_shape(h.rows, h.cols, h.post_spacing, fraction)
    ex, ey = (cols - 1) * post, (rows - 1) * post
    xs = -ex / 2.0 + np.arange(cols) * post
    ys = ey / 2.0 - np.arange(rows) * post
    ox, oy = h.origin_world
    fj = np.clip((xs - ox) / h.post_spacing, 0.0, h.cols - 1)
    fi = np.clip((oy - ys) / h.post_spacing, 0.0, h.rows - 1)
    FI, FJ = np.meshgrid(fi, fj, indexing="ij")
    z = _bilinear_grid(h, FI, FJ)
    return Heightfield(post, z, ~np.isfinite(z), h.nodata_value, h.source)


def triangulate(h: Heightfield) -> TriangleMesh:
    if h.rows < 2 or h.cols < 2:
        raise DegenerateGrid("triangulation needs at least a 2x2 grid")
    m = h.nodata_mask
    valid = ~(m[:-1, :-1] | m[:-1, 1:] | m[1:, :-1] | m[1:, 1:])
    ci, cj = np.nonzero(valid)
    if ci.size == 0:
        raise DegenerateGrid("grid has no fully valid cell")
    cols = h.cols
    nw = ci * cols + cj
    ne = nw + 1
    sw = nw + cols
    se = sw + 1
    tris = np.empty((2 * ci.size, 3), dtype=np.int64)
    tris[0::2] = np.stack([nw, se, ne], axis=1)
    tris[1::2] = np.stack([nw, sw, se], axis=1)

    used = np.unique(tris)
    remap = np.full(h.rows * cols, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    tris = remap[tris]
    ii, jj = np.divmod(used, cols)
    verts = np.stack([h.post_x(jj), h.post_y(ii), h.elevations[ii, jj]], axis=1).astype(np.float64)

    e1 = verts[tris[:, 1]] - verts[tris[:, 0]]
    e2 = verts[tris[:, 2]] - verts[tris[:, 0]]
    cross = np.cross(e1, e2)
    length = np.linalg.norm(cross, axis=1)
    face_n = cross / length[:, None]

    vn = np.zeros_like(verts)
    for k in range(3):
        np.add.at(vn, tris[:, k], cross)
    vn /= np.linalg.norm(vn, axis=1)[:, None]

    for a in (verts, tris, face_n, vn):
        a.flags.writeable = False
    return TriangleMesh(verts, tris, face_n, vn, h.post_spacing)


def _snap(f: float) -> float:
    r = round(f)
    return float(r) if abs(f - r) <= 1e-12 * max(1.0, abs(f)) else f


def _fractional_index(h: Heightfield, x: float, y: float) -> tuple[float, float] | None:
    ox, oy = h.origin_world
    fj = _snap((x - ox) / h.post_spacing)
    fi = _snap((oy - y) / h.post_spacing)
    if not (0.0 <= fj <= h.cols - 1 and 0.0 <= fi <= h.rows - 1):
        return None
    return fi, fj


def height_at(h: Heightfield, x: float, y: float) -> float | Missing:
    """Bilinear elevation at world (x, y)."""
    idx = _fractional_index(h, x, y)
    if idx is None:
        return Missing.OUT_OF_BOUNDS
    z = float(_bilinear_grid(h, np.asarray(idx[0]), np.asarray(idx[1])))
    return Missing.NODATA if math.isnan(z) else z


def heights_at(h: Heightfield, xs, ys) -> np.ndarray:
    """Vectorised :func:`height_at`; NaN for nodata and out-of-bounds points."""
    xs, ys = np.broadcast_arrays(np.asarray(xs, float), np.asarray(ys, float))
    ox, oy = h.origin_world
    fj = (xs - ox) / h.post_spacing
    fi = (oy - ys) / h.post_spacing
    inside = (fj >= 0) & (fj <= h.cols - 1) & (fi >= 0) & (fi <= h.rows - 1)
    out = np.full(xs.shape, np.nan)
    if inside.any():
        out[inside] = _bilinear_grid(h, fi[inside], fj[inside])
    return out


def mesh_height_at(h: Heightfield, x: float, y: float) -> float | Missing:
    """Elevation of the triangulated surface at (x, y), following the NW-SE diagonal."""
    idx = _fractional_index(h, x, y)
    if idx is None:
        return Missing.OUT_OF_BOUNDS
    fi, fj = idx
    i0 = min(int(math.floor(fi)), h.rows - 2)
    j0 = min(int(math.floor(fj)), h.cols - 2)
    b, a = fi - i0, fj - j0  # b southward, a eastward
    z = h.elevations
    nw, ne, sw, se = z[i0, j0], z[i0, j0 + 1], z[i0 + 1, j0], z[i0 + 1, j0 + 1]
    if a >= b:
        val = nw + a * (ne - nw) + b * (se - ne)
    else:
        val = nw + b * (sw - nw) + a * (se - sw)
    return Missing.NODATA if math.isnan(val) else float(val)


@njit(cache=True, nogil=True)
def bilinear_clamped(img, fi, fj):
    """Bilinear sample of a 2-D array at fractional (row, col), clamped to the edges."""
    rows, cols = img.shape
    if fi < 0.0:
        fi = 0.0
    elif fi > rows - 1:
        fi = rows - 1.0
    if fj < 0.0:
        fj = 0.0
    elif fj > cols - 1:
        fj = cols - 1.0
    i0 = int(math.floor(fi))
    j0 = int(math.floor(fj))
    if i0 > rows - 2:
        i0 = max(rows - 2, 0)
    if j0 > cols - 2:
        j0 = max(cols - 2, 0)
    wi = fi - i0
    wj = fj - j0
    i1 = min(i0 + 1, rows - 1)
    j1 = min(j0 + 1, cols - 1)
    top = img[i0, j0] + wj * (img[i0, j1] - img[i0, j0])
    bot = img[i1, j0] + wj * (img[i1, j1] - img[i1, j0])
    return top + wi * (bot - top)


def sample_albedo(t: OrthoTexture, x: float, y: float) -> float:
    ox, oy = t.origin_world
    fj = (x - ox) / t.pixel_scale
    fi = (oy - y) / t.pixel_scale
    return float(bilinear_clamped(t.albedo, _snap(fi), _snap(fj)))


def world_bounds(mesh: TriangleMesh) -> Aabb:
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise EmptyMesh("mesh has no triangles")
    return Aabb(mesh.vertices.min(axis=0).copy(), mesh.vertices.max(axis=0).copy())
