"""Bounding volume hierarchy over terrain triangles.

Construction uses a binned surface-area heuristic along the longest centroid
axis, falling back to a median split when binning cannot separate the
triangles (or past a depth limit).  Leaves hold at most ``leaf_size``
triangles.

Ray/triangle tests use the watertight formulation of Woop, Benthin and Wald
(2013) in double precision.  Traversal and the brute-force oracle share that
test, so any disagreement between them is a traversal defect.  Among hits
with equal ``t`` the lowest triangle index wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .terrain import EmptyMesh, TriangleMesh

__all__ = [
    "Ray",
    "Hit",
    "Bvh",
    "build_bvh",
    "intersect",
    "intersect_brute",
    "occluded",
    "intersect_batch",
    "intersect_brute_batch",
    "occluded_batch",
    "intersect_triangle_naive",
]

STACK_SIZE = 256
SAH_BINS = 16
SAH_MAX_DEPTH = 64


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]
    t_min: float = 0.0
    t_max: float = math.inf

    def __post_init__(self) -> None:
        o = tuple(float(v) for v in self.origin)
        d = tuple(float(v) for v in self.direction)
        if len(o) != 3 or len(d) != 3:
            raise ValueError("origin and direction must be 3-vectors")
        norm = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length (|d| = {norm})")
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError("need 0 <= t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def toward(cls, origin, direction, t_min: float = 0.0, t_max: float = math.inf) -> "Ray":
        """Build a ray, normalising ``direction`` first."""
        d = np.asarray(direction, dtype=np.float64)
        return cls(tuple(origin), tuple(d / np.linalg.norm(d)), t_min, t_max)

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.origin) + t * np.asarray(self.direction)


@dataclass(frozen=True)
class Hit:
    t: float
    triangle_index: int
    barycentric: tuple[float, float]
    point: tuple[float, float, float]
    normal: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class Bvh:
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray  # -1 for leaves
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    node_axis: np.ndarray
    triangle_order: np.ndarray
    leaf_size: int
    depth: int
    eps: float  # traversal padding of node boxes, metres

    @property
    def n_nodes(self) -> int:
        return len(self.node_left)

    def leaves(self) -> np.ndarray:
        return np.nonzero(self.node_left < 0)[0]

    def kernel_args(self) -> tuple:
        return (
            self.node_min,
            self.node_max,
            self.node_left,
            self.node_right,
            self.node_start,
            self.node_count,
            self.triangle_order,
            self.eps,
        )

    def dump_csv(self, path) -> None:
        """Debug dump: one line per node with its bounds and children."""
        lines = ["node,min_x,min_y,min_z,max_x,max_y,max_z,left,right,start,count"]
        for k in range(self.n_nodes):
            lo, hi = self.node_min[k], self.node_max[k]
            lines.append(
                f"{k},{lo[0]!r},{lo[1]!r},{lo[2]!r},{hi[0]!r},{hi[1]!r},{hi[2]!r},"
                f"{self.node_left[k]},{self.node_right[k]},{self.node_start[k]},{self.node_count[k]}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------


@njit(cache=True)
def _half_area(lo0, lo1, lo2, hi0, hi1, hi2):
    dx = hi0 - lo0
    dy = hi1 - lo1
    dz = hi2 - lo2
    return dx * dy + dy * dz + dz * dx


@njit(cache=True)
def _build_kernel(tri_lo, tri_hi, cent, leaf_size, n_bins, sah_max_depth):
    n = cent.shape[0]
    order = np.arange(n)
    cap = max(2 * n, 2)
    nmin = np.empty((cap, 3))
    nmax = np.empty((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    axis = np.zeros(cap, dtype=np.int64)

    st_node = np.empty(STACK_SIZE, dtype=np.int64)
    st_s = np.empty(STACK_SIZE, dtype=np.int64)
    st_e = np.empty(STACK_SIZE, dtype=np.int64)
    st_d = np.empty(STACK_SIZE, dtype=np.int64)
    tmp = np.empty(n, dtype=np.int64)
    binid = np.empty(n, dtype=np.int64)
    key = np.empty(n)

    bc = np.zeros(n_bins, dtype=np.int64)
    blo = np.empty((n_bins, 3))
    bhi = np.empty((n_bins, 3))
    rarea = np.empty(n_bins)
    rcnt = np.empty(n_bins, dtype=np.int64)

    sp = 0
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n
    st_d[0] = 0
    sp = 1
    used = 1
    maxdepth = 0
    lo = np.empty(3)
    hi = np.empty(3)
    clo = np.empty(3)
    chi = np.empty(3)
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_s[sp]
        e = st_e[sp]
        d = st_d[sp]
        if d > maxdepth:
            maxdepth = d
        for a in range(3):
            lo[a] = np.inf
            hi[a] = -np.inf
            clo[a] = np.inf
            chi[a] = -np.inf
        for k in range(s, e):
            t = order[k]
            for a in range(3):
                if tri_lo[t, a] < lo[a]:
                    lo[a] = tri_lo[t, a]
                if tri_hi[t, a] > hi[a]:
                    hi[a] = tri_hi[t, a]
                if cent[t, a] < clo[a]:
                    clo[a] = cent[t, a]
                if cent[t, a] > chi[a]:
                    chi[a] = cent[t, a]
        for a in range(3):
            nmin[node, a] = lo[a]
            nmax[node, a] = hi[a]
        cnt = e - s
        if cnt <= leaf_size:
            start[node] = s
            count[node] = cnt
            continue
        ax = 0
        ext = chi[0] - clo[0]
        for a in range(1, 3):
            if chi[a] - clo[a] > ext:
                ext = chi[a] - clo[a]
                ax = a
        mid = -1
        if ext > 0.0 and d < sah_max_depth:
            for b in range(n_bins):
                bc[b] = 0
                for a in range(3):
                    blo[b, a] = np.inf
                    bhi[b, a] = -np.inf
            scale = n_bins / ext
            for k in range(s, e):
                t = order[k]
                b = int((cent[t, ax] - clo[ax]) * scale)
                if b >= n_bins:
                    b = n_bins - 1
                binid[k] = b
                bc[b] += 1
                for a in range(3):
                    if tri_lo[t, a] < blo[b, a]:
                        blo[b, a] = tri_lo[t, a]
                    if tri_hi[t, a] > bhi[b, a]:
                        bhi[b, a] = tri_hi[t, a]
            # suffix sweep
            r0 = np.inf
            r1 = np.inf
            r2 = np.inf
            s0 = -np.inf
            s1 = -np.inf
            s2 = -np.inf
            rc = 0
            for b in range(n_bins - 1, 0, -1):
                r0 = min(r0, blo[b, 0])
                r1 = min(r1, blo[b, 1])
                r2 = min(r2, blo[b, 2])
                s0 = max(s0, bhi[b, 0])
                s1 = max(s1, bhi[b, 1])
                s2 = max(s2, bhi[b, 2])
                rc += bc[b]
                rcnt[b] = rc
                rarea[b] = _half_area(r0, r1, r2, s0, s1, s2) if rc > 0 else 0.0
            l0 = np.inf
            l1 = np.inf
            l2 = np.inf
            m0 = -np.inf
            m1 = -np.inf
            m2 = -np.inf
            lc = 0
            best = np.inf
            bestk = -1
            for b in range(n_bins - 1):
                l0 = min(l0, blo[b, 0])
                l1 = min(l1, blo[b, 1])
                l2 = min(l2, blo[b, 2])
                m0 = max(m0, bhi[b, 0])
                m1 = max(m1, bhi[b, 1])
                m2 = max(m2, bhi[b, 2])
                lc += bc[b]
                if lc == 0 or rcnt[b + 1] == 0:
                    continue
                cost = lc * _half_area(l0, l1, l2, m0, m1, m2) + rcnt[b + 1] * rarea[b + 1]
                if cost < best:
                    best = cost
                    bestk = b
            if bestk >= 0:
                w = 0
                for k in range(s, e):
                    if binid[k] <= bestk:
                        tmp[w] = order[k]
                        w += 1
                nl = w
                for k in range(s, e):
                    if binid[k] > bestk:
                        tmp[w] = order[k]
                        w += 1
                for k in range(cnt):
                    order[s + k] = tmp[k]
                mid = s + nl
        if mid < 0:
            for k in range(cnt):
                key[k] = cent[order[s + k], ax]
            perm = np.argsort(key[:cnt], kind="mergesort")
            for k in range(cnt):
                tmp[k] = order[s + perm[k]]
            for k in range(cnt):
                order[s + k] = tmp[k]
            mid = s + cnt // 2
        lnode = used
        rnode = used + 1
        used += 2
        left[node] = lnode
        right[node] = rnode
        axis[node] = ax
        st_node[sp] = rnode
        st_s[sp] = mid
        st_e[sp] = e
        st_d[sp] = d + 1
        sp += 1
        st_node[sp] = lnode
        st_s[sp] = s
        st_e[sp] = mid
        st_d[sp] = d + 1
        sp += 1
    return (
        nmin[:used].copy(),
        nmax[:used].copy(),
        left[:used].copy(),
        right[:used].copy(),
        start[:used].copy(),
        count[:used].copy(),
        axis[:used].copy(),
        order,
        maxdepth,
    )


def build_bvh(mesh: TriangleMesh, leaf_size: int = 4) -> Bvh:
    """Build a BVH over ``mesh``.  Deterministic for a given mesh and leaf size."""
    if len(mesh.triangles) == 0:
        raise EmptyMesh("cannot build a BVH over an empty mesh")
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    tv = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    tri_lo = np.ascontiguousarray(tv.min(axis=1))
    tri_hi = np.ascontiguousarray(tv.max(axis=1))
    cent = np.ascontiguousarray(tv.mean(axis=1))
    nmin, nmax, left, right, start, count, axis, order, depth = _build_kernel(
        tri_lo, tri_hi, cent, int(leaf_size), SAH_BINS, SAH_MAX_DEPTH
    )
    scale = max(1.0, float(np.abs(mesh.vertices).max()))
    arrays = (nmin, nmax, left, right, start, count, axis, order)
    for a in arrays:
        a.flags.writeable = False
    return Bvh(*arrays, leaf_size=int(leaf_size), depth=int(depth), eps=1e-9 * scale)


# --------------------------------------------------------------------------
# traversal kernels
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True, inline="always")
def _ray_setup(dx, dy, dz):
    ax, ay, az = abs(dx), abs(dy), abs(dz)
    kz = 0
    if ay > ax and ay >= az:
        kz = 1
    elif az > ax and az > ay:
        kz = 2
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    d = (dx, dy, dz)
    dkz = d[kz]
    if dkz < 0.0:
        kx, ky = ky, kx
    sx = d[kx] / dkz
    sy = d[ky] / dkz
    sz = 1.0 / dkz
    return kx, ky, kz, sx, sy, sz


@njit(cache=True, nogil=True, inline="always")
def _tri_test(verts, tris, tri, ox, oy, oz, kx, ky, kz, sx, sy, sz):
    """Watertight test. Returns (hit, t, b0, b1, b2) with b_i the weight of vertex i."""
    i0 = tris[tri, 0]
    i1 = tris[tri, 1]
    i2 = tris[tri, 2]
    a = (verts[i0, 0] - ox, verts[i0, 1] - oy, verts[i0, 2] - oz)
    b = (verts[i1, 0] - ox, verts[i1, 1] - oy, verts[i1, 2] - oz)
    c = (verts[i2, 0] - ox, verts[i2, 1] - oy, verts[i2, 2] - oz)
    ax = a[kx] - sx * a[kz]
    ay = a[ky] - sy * a[kz]
    bx = b[kx] - sx * b[kz]
    by = b[ky] - sy * b[kz]
    cx = c[kx] - sx * c[kz]
    cy = c[ky] - sy * c[kz]
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return False, 0.0, 0.0, 0.0, 0.0
    det = u + v + w
    if det == 0.0:
        return False, 0.0, 0.0, 0.0, 0.0
    tt = u * (sz * a[kz]) + v * (sz * b[kz]) + w * (sz * c[kz])
    inv = 1.0 / det
    return True, tt * inv, u * inv, v * inv, w * inv


@njit(cache=True, nogil=True, inline="always")
def _slab(nmin, nmax, node, eps, ox, oy, oz, ix, iy, iz, dx, dy, dz):
    tn = -np.inf
    tf = np.inf
    lo = nmin[node, 0] - eps
    hi = nmax[node, 0] + eps
    if dx == 0.0:
        if ox < lo or ox > hi:
            return np.inf, -np.inf
    else:
        t0 = (lo - ox) * ix
        t1 = (hi - ox) * ix
        if t0 > t1:
            t0, t1 = t1, t0
        tn = max(tn, t0)
        tf = min(tf, t1)
    lo = nmin[node, 1] - eps
    hi = nmax[node, 1] + eps
    if dy == 0.0:
        if oy < lo or oy > hi:
            return np.inf, -np.inf
    else:
        t0 = (lo - oy) * iy
        t1 = (hi - oy) * iy
        if t0 > t1:
            t0, t1 = t1, t0
        tn = max(tn, t0)
        tf = min(tf, t1)
    lo = nmin[node, 2] - eps
    hi = nmax[node, 2] + eps
    if dz == 0.0:
        if oz < lo or oz > hi:
            return np.inf, -np.inf
    else:
        t0 = (lo - oz) * iz
        t1 = (hi - oz) * iz
        if t0 > t1:
            t0, t1 = t1, t0
        tn = max(tn, t0)
        tf = min(tf, t1)
    return tn, tf


@njit(cache=True, nogil=True)
def closest_hit(
    nmin, nmax, left, right, start, count, order, eps,
    verts, tris, ox, oy, oz, dx, dy, dz, tmin, tmax, stack, tstack,
):
    """BVH closest hit.  Returns (tri, t, b0, b1, b2, n_tests); tri = -1 on miss."""
    kx, ky, kz, sx, sy, sz = _ray_setup(dx, dy, dz)
    ix = 1.0 / dx if dx != 0.0 else 0.0
    iy = 1.0 / dy if dy != 0.0 else 0.0
    iz = 1.0 / dz if dz != 0.0 else 0.0
    best_tri = -1
    best_t = tmax
    bb0 = 0.0
    bb1 = 0.0
    bb2 = 0.0
    tests = 0
    sp = 0
    tn, tf = _slab(nmin, nmax, 0, eps, ox, oy, oz, ix, iy, iz, dx, dy, dz)
    if tn <= tf and tf >= tmin and tn <= tmax:
        stack[0] = 0
        tstack[0] = tn
        sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if tstack[sp] > best_t:
            continue
        lnode = left[node]
        if lnode < 0:
            s = start[node]
            for k in range(s, s + count[node]):
                tri = order[k]
                tests += 1
                ok, t, b0, b1, b2 = _tri_test(verts, tris, tri, ox, oy, oz, kx, ky, kz, sx, sy, sz)
                if not ok or t < tmin or t > tmax:
                    continue
                if best_tri < 0 or t < best_t or (t == best_t and tri < best_tri):
                    best_tri = tri
                    best_t = t
                    bb0 = b0
                    bb1 = b1
                    bb2 = b2
            continue
        rnode = right[node]
        tnl, tfl = _slab(nmin, nmax, lnode, eps, ox, oy, oz, ix, iy, iz, dx, dy, dz)
        tnr, tfr = _slab(nmin, nmax, rnode, eps, ox, oy, oz, ix, iy, iz, dx, dy, dz)
        hl = tnl <= tfl and tfl >= tmin and tnl <= best_t
        hr = tnr <= tfr and tfr >= tmin and tnr <= best_t
        if hl and hr:
            if tnr < tnl:
                stack[sp] = lnode
                tstack[sp] = tnl
                stack[sp + 1] = rnode
                tstack[sp + 1] = tnr
            else:
                stack[sp] = rnode
                tstack[sp] = tnr
                stack[sp + 1] = lnode
                tstack[sp + 1] = tnl
            sp += 2
        elif hl:
            stack[sp] = lnode
            tstack[sp] = tnl
            sp += 1
        elif hr:
            stack[sp] = rnode
            tstack[sp] = tnr
            sp += 1
    return best_tri, best_t, bb0, bb1, bb2, tests


@njit(cache=True, nogil=True)
def any_hit(
    nmin, nmax, left, right, start, count, order, eps,
    verts, tris, ox, oy, oz, dx, dy, dz, tmin, tmax, stack,
):
    kx, ky, kz, sx, sy, sz = _ray_setup(dx, dy, dz)
    ix = 1.0 / dx if dx != 0.0 else 0.0
    iy = 1.0 / dy if dy != 0.0 else 0.0
    iz = 1.0 / dz if dz != 0.0 else 0.0
    tn, tf = _slab(nmin, nmax, 0, eps, ox, oy, oz, ix, iy, iz, dx, dy, dz)
    if not (tn <= tf and tf >= tmin and tn <= tmax):
        return False
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        lnode = left[node]
        if lnode < 0:
            s = start[node]
            for k in range(s, s + count[node]):
                ok, t, b0, b1, b2 = _tri_test(verts, tris, order[k], ox, oy, oz, kx, ky, kz, sx, sy, sz)
                if ok and tmin <= t <= tmax:
                    return True
            continue
        for child in (right[node], lnode):
            tn, tf = _slab(nmin, nmax, child, eps, ox, oy, oz, ix, iy, iz, dx, dy, dz)
            if tn <= tf and tf >= tmin and tn <= tmax:
                stack[sp] = child
                sp += 1
    return False


@njit(cache=True, nogil=True)
def brute_hit(verts, tris, ox, oy, oz, dx, dy, dz, tmin, tmax):
    kx, ky, kz, sx, sy, sz = _ray_setup(dx, dy, dz)
    best_tri = -1
    best_t = tmax
    bb0 = 0.0
    bb1 = 0.0
    bb2 = 0.0
    for tri in range(tris.shape[0]):
        ok, t, b0, b1, b2 = _tri_test(verts, tris, tri, ox, oy, oz, kx, ky, kz, sx, sy, sz)
        if not ok or t < tmin or t > tmax:
            continue
        if best_tri < 0 or t < best_t:
            best_tri = tri
            best_t = t
            bb0 = b0
            bb1 = b1
            bb2 = b2
    return best_tri, best_t, bb0, bb1, bb2, tris.shape[0]


@njit(cache=True, nogil=True)
def _batch_closest(nmin, nmax, left, right, start, count, order, eps, verts, tris, org, dirs, tmin, tmax):
    n = org.shape[0]
    tri = np.empty(n, dtype=np.int64)
    t = np.empty(n)
    bary = np.empty((n, 3))
    tests = np.empty(n, dtype=np.int64)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    tstack = np.empty(STACK_SIZE)
    for r in range(n):
        res = closest_hit(
            nmin, nmax, left, right, start, count, order, eps, verts, tris,
            org[r, 0], org[r, 1], org[r, 2], dirs[r, 0], dirs[r, 1], dirs[r, 2],
            tmin[r], tmax[r], stack, tstack,
        )
        tri[r] = res[0]
        t[r] = res[1]
        bary[r, 0] = res[2]
        bary[r, 1] = res[3]
        bary[r, 2] = res[4]
        tests[r] = res[5]
    return tri, t, bary, tests


@njit(cache=True, nogil=True)
def _batch_brute(verts, tris, org, dirs, tmin, tmax):
    n = org.shape[0]
    tri = np.empty(n, dtype=np.int64)
    t = np.empty(n)
    bary = np.empty((n, 3))
    tests = np.empty(n, dtype=np.int64)
    for r in range(n):
        res = brute_hit(
            verts, tris, org[r, 0], org[r, 1], org[r, 2], dirs[r, 0], dirs[r, 1], dirs[r, 2], tmin[r], tmax[r]
        )
        tri[r] = res[0]
        t[r] = res[1]
        bary[r, 0] = res[2]
        bary[r, 1] = res[3]
        bary[r, 2] = res[4]
        tests[r] = res[5]
    return tri, t, bary, tests


@njit(cache=True, nogil=True)
def _batch_any(nmin, nmax, left, right, start, count, order, eps, verts, tris, org, dirs, tmin, tmax):
    n = org.shape[0]
    out = np.empty(n, dtype=np.bool_)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    for r in range(n):
        out[r] = any_hit(
            nmin, nmax, left, right, start, count, order, eps, verts, tris,
            org[r, 0], org[r, 1], org[r, 2], dirs[r, 0], dirs[r, 1], dirs[r, 2], tmin[r], tmax[r], stack,
        )
    return out


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchHits:
    """Results of a batched query; ``triangle`` is -1 for misses."""

    triangle: np.ndarray
    t: np.ndarray
    barycentric: np.ndarray  # (n, 3) weights of the triangle's vertices
    tests: np.ndarray  # ray/triangle tests performed per ray

    @property
    def hit(self) -> np.ndarray:
        return self.triangle >= 0


def _batch_inputs(origins, directions, t_min, t_max):
    org = np.ascontiguousarray(np.atleast_2d(np.asarray(origins, dtype=np.float64)))
    dirs = np.ascontiguousarray(np.atleast_2d(np.asarray(directions, dtype=np.float64)))
    n = len(org)
    tmin = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)))
    tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)))
    return org, dirs, tmin, tmax


def intersect_batch(bvh: Bvh, mesh: TriangleMesh, origins, directions, t_min=0.0, t_max=np.inf) -> BatchHits:
    org, dirs, tmin, tmax = _batch_inputs(origins, directions, t_min, t_max)
    return BatchHits(*_batch_closest(*bvh.kernel_args(), mesh.vertices, mesh.triangles, org, dirs, tmin, tmax))


def intersect_brute_batch(mesh: TriangleMesh, origins, directions, t_min=0.0, t_max=np.inf) -> BatchHits:
    org, dirs, tmin, tmax = _batch_inputs(origins, directions, t_min, t_max)
    return BatchHits(*_batch_brute(mesh.vertices, mesh.triangles, org, dirs, tmin, tmax))


def occluded_batch(bvh: Bvh, mesh: TriangleMesh, origins, directions, t_min=0.0, t_max=np.inf) -> np.ndarray:
    org, dirs, tmin, tmax = _batch_inputs(origins, directions, t_min, t_max)
    return _batch_any(*bvh.kernel_args(), mesh.vertices, mesh.triangles, org, dirs, tmin, tmax)


def _make_hit(mesh: TriangleMesh, tri: int, t: float, b0: float, b1: float, b2: float, normals: str) -> Hit:
    idx = mesh.triangles[tri]
    v = mesh.vertices[idx]
    point = b0 * v[0] + b1 * v[1] + b2 * v[2]
    if normals == "flat":
        n = mesh.face_normals[tri]
    else:
        vn = mesh.vertex_normals[idx]
        n = b0 * vn[0] + b1 * vn[1] + b2 * vn[2]
        n = n / np.linalg.norm(n)
    return Hit(float(t), int(tri), (float(b1), float(b2)), tuple(point.tolist()), tuple(n.tolist()))


def intersect(bvh: Bvh, mesh: TriangleMesh, ray: Ray, normals: str = "smooth") -> Hit | None:
    """Closest hit along ``ray`` within [t_min, t_max], or None."""
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    tstack = np.empty(STACK_SIZE)
    tri, t, b0, b1, b2, _ = closest_hit(
        *bvh.kernel_args(), mesh.vertices, mesh.triangles, *ray.origin, *ray.direction,
        ray.t_min, ray.t_max, stack, tstack,
    )
    if tri < 0:
        return None
    return _make_hit(mesh, tri, t, b0, b1, b2, normals)


def intersect_brute(mesh: TriangleMesh, ray: Ray, normals: str = "smooth") -> Hit | None:
    """Exhaustive oracle for :func:`intersect` (same triangle test, same tie-break)."""
    if len(mesh.triangles) == 0:
        return None
    tri, t, b0, b1, b2, _ = brute_hit(mesh.vertices, mesh.triangles, *ray.origin, *ray.direction, ray.t_min, ray.t_max)
    if tri < 0:
        return None
    return _make_hit(mesh, tri, t, b0, b1, b2, normals)


def occluded(bvh: Bvh, mesh: TriangleMesh, ray: Ray) -> bool:
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    return bool(
        any_hit(*bvh.kernel_args(), mesh.vertices, mesh.triangles, *ray.origin, *ray.direction, ray.t_min, ray.t_max, stack)
    )


def intersect_triangle_naive(v0, v1, v2, origin, direction, t_min=0.0, t_max=math.inf):
    """Plain Moller-Trumbore test, for cross-checking on small cases.

    Returns (t, b1, b2) or None.
    """
    v0, v1, v2, o, d = (np.asarray(x, dtype=np.float64) for x in (v0, v1, v2, origin, direction))
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(d, e2)
    det = float(e1 @ p)
    if abs(det) < 1e-14:
        return None
    s = o - v0
    u = float(s @ p) / det
    if u < 0.0 or u > 1.0:
        return None
    q = np.cross(s, e1)
    v = float(d @ q) / det
    if v < 0.0 or u + v > 1.0:
        return None
    t = float(e2 @ q) / det
    if t < t_min or t > t_max:
        return None
    return t, u, v
