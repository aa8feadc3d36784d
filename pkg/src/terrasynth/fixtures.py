"""Synthetic terrains and textures with known geometry.

These stand in for real orbital products in tests, the self-test command and
demo runs.  Every generator is deterministic for its arguments.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .imageio import write_pgm
from .ingest import Heightfield, OrthoTexture, write_dtm_grid


def _grid(n_rows: int, n_cols: int, post: float):
    ex, ey = (n_cols - 1) * post, (n_rows - 1) * post
    x = -ex / 2.0 + np.arange(n_cols) * post
    y = ey / 2.0 - np.arange(n_rows) * post
    return np.meshgrid(x, y)


def flat(n: int = 33, post: float = 1.0, z0: float = 0.0) -> Heightfield:
    return Heightfield.from_array(np.full((n, n), float(z0)), post)


def plane(n: int, post: float, a: float, b: float, c: float) -> Heightfield:
    """z = a*x + b*y + c."""
    X, Y = _grid(n, n, post)
    return Heightfield.from_array(a * X + b * Y + c, post)


def step(n: int = 161, post: float = 0.125, wall_height: float = 10.0) -> Heightfield:
    """Plateau of ``wall_height`` for y >= 0 (north half), ground at 0 to the south.

    ``n`` should be odd so that a row of posts lies exactly on y = 0.
    """
    X, Y = _grid(n, n, post)
    return Heightfield.from_array(np.where(Y >= 0.0, float(wall_height), 0.0), post)


def hills(n: int = 65, post: float = 1.0, seed: int = 0, relief: float = 20.0, bumps: int = 12) -> Heightfield:
    """Smooth random relief: a sum of Gaussian hills and pits over a gentle tilt."""
    rng = np.random.default_rng(seed)
    X, Y = _grid(n, n, post)
    half = (n - 1) * post / 2.0
    z = 0.02 * X - 0.015 * Y
    for _ in range(bumps):
        cx, cy = rng.uniform(-half, half, 2)
        sigma = rng.uniform(0.08, 0.3) * 2 * half
        amp = rng.uniform(-0.5, 1.0) * relief
        z = z + amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * sigma**2))
    return Heightfield.from_array(z, post)


def texture_for(h: Heightfield, texels_per_post: int = 4, seed: int = 0) -> OrthoTexture:
    """Co-registered albedo texture with smooth blotches and fine grain."""
    rng = np.random.default_rng(seed + 1)
    rows = (h.rows - 1) * texels_per_post + 1
    cols = (h.cols - 1) * texels_per_post + 1
    scale = h.post_spacing / texels_per_post
    X, Y = _grid(rows, cols, scale)
    ext = max(h.extent_x, h.extent_y, scale)
    a = np.full(X.shape, 0.45)
    for _ in range(8):
        cx, cy = rng.uniform(-ext / 2, ext / 2, 2)
        sigma = rng.uniform(0.05, 0.2) * ext
        a += rng.uniform(-0.2, 0.2) * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * sigma**2))
    a += rng.normal(0.0, 0.03, X.shape)
    a = np.clip(a, 0.05, 0.95)
    # quantise to what an 8-bit file holds so saved and in-memory fixtures agree
    a = np.round(a * 255.0) / 255.0
    return OrthoTexture(scale, a)


def write_fixture_pair(directory: str | os.PathLike, h: Heightfield, t: OrthoTexture | None = None) -> tuple[Path, Path | None]:
    """Write ``dtm.hfg`` (and ``ortho.pgm``) into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dtm = d / "dtm.hfg"
    write_dtm_grid(h, dtm)
    if t is None:
        return dtm, None
    tex = d / "ortho.pgm"
    write_pgm(tex, np.round(t.albedo * 255.0).astype(np.uint8))
    return dtm, tex
