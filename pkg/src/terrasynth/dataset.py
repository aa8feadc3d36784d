"""Dataset synthesis: sun-sweep maps, sampled observations, manifest.

Output layout under ``out_dir``::

    maps/map_az{AZ}_el{EL}.png    one orthographic gray map per sun config
    maps/depth.pfm                one orthographic depth map (sun-invariant)
    obs/{id}.png                  perspective observation
    obs/{id}_depth.pfm            its ray-distance depth image
    manifest.jsonl                header line, then one record per line
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import __version__
from .imageio import write_pfm, write_png_gray8
from .ingest import Heightfield
from .render import RenderConfig, SceneBundle, expose_quantize, render_image
from .rng import mix_seed
from .scene import (
    NoTerrainBelow,
    OrthoCamera,
    PerspectiveIntrinsics,
    SunLight,
    place_camera,
)
from .terrain import heights_at

logger = logging.getLogger(__name__)

__all__ = [
    "InvalidSpec",
    "BoundsOutsideTerrain",
    "ResampleExhausted",
    "OutputIoError",
    "MalformedManifest",
    "SunSweepSpec",
    "ObservationSpec",
    "ObservationRecord",
    "MapRecord",
    "Manifest",
    "SampledObservations",
    "sweep_sun_configs",
    "sample_observations",
    "map_camera_for",
    "generate_dataset",
    "write_manifest",
    "read_manifest",
    "CONVENTIONS",
]

CONVENTIONS = {
    "world_frame": "ENU (x East, y North, z Up), metres, origin at the terrain extent centre",
    "camera_frame": "x right along image width, y down along image height, z along the optical axis",
    "R_WC": "camera-to-world rotation, row-major; column i is camera axis i in world coordinates; p_W = R_WC p_C + t_WC",
    "t_WC": "camera optical centre in world coordinates",
    "sun_azimuth": "degrees clockwise from North seen from above",
    "sun_elevation": "degrees above the horizon",
    "depth": "metres along each pixel-centre ray from the camera centre (perspective) or ray-origin plane (orthographic); 0 = miss",
    "pixel_centres": "pixel (u, v) is sampled at (u + 0.5, v + 0.5)",
    "pfm_rows": "PFM rows stored bottom-to-top per the PFM format",
}


class InvalidSpec(ValueError):
    pass


class BoundsOutsideTerrain(ValueError):
    pass


class ResampleExhausted(RuntimeError):
    pass


class OutputIoError(OSError):
    pass


class MalformedManifest(ValueError):
    pass


@dataclass(frozen=True)
class SunSweepSpec:
    azimuth_step_deg: float = 45.0
    elevations_deg: tuple[float, ...] = (30.0, 60.0, 90.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "elevations_deg", tuple(float(e) for e in self.elevations_deg))
        step = float(self.azimuth_step_deg)
        if not step > 0 or abs(360.0 / step - round(360.0 / step)) > 1e-9:
            raise InvalidSpec(f"azimuth step {step} does not divide 360")
        els = self.elevations_deg
        if not els:
            raise InvalidSpec("at least one elevation is required")
        if any(not (0.0 <= e <= 90.0) for e in els):
            raise InvalidSpec("elevations must lie in [0, 90]")
        if any(b <= a for a, b in zip(els, els[1:])):
            raise InvalidSpec("elevations must be strictly increasing")

    @property
    def azimuths(self) -> list[float]:
        n = int(round(360.0 / self.azimuth_step_deg))
        return [k * self.azimuth_step_deg for k in range(n)]


def sweep_sun_configs(
    spec: SunSweepSpec,
    irradiance: float = SunLight.irradiance,
    angular_diameter_deg: float = SunLight.angular_diameter_deg,
) -> list[SunLight]:
    """Elevation-major list of sun configs; elevation 90 collapses to one zenith entry."""
    out = []
    for el in spec.elevations_deg:
        azimuths = [0.0] if el == 90.0 else spec.azimuths
        for az in azimuths:
            out.append(SunLight(az, el, irradiance, angular_diameter_deg))
    return out


@dataclass(frozen=True)
class ObservationSpec:
    id: str
    x: float
    y: float
    agl: float
    attitude: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sun: SunLight = field(default_factory=SunLight)


class SampledObservations(list):
    """List of :class:`ObservationSpec` that also remembers how many draws were rejected."""

    def __init__(self, items: Iterable[ObservationSpec] = (), rejected: int = 0) -> None:
        super().__init__(items)
        self.rejected = rejected


def sample_observations(
    terrain: Heightfield,
    bounds: tuple[float, float, float, float] | None,
    agl_range: tuple[float, float],
    n: int,
    master_seed: int,
    sun: SunLight = SunLight(),
    attitude: tuple[float, float, float] = (0.0, 0.0, 0.0),
    randomize_yaw: bool = False,
) -> SampledObservations:
    """Draw ``n`` observation specs uniformly in (x, y) and altitude above ground.

    ``bounds`` is ``(x_min, y_min, x_max, y_max)`` in world metres (None = the
    whole terrain).  Draws landing on nodata are rejected and redrawn, up to
    ``100 * n`` draws in total.
    """
    lo, hi = (float(v) for v in agl_range)
    if not lo > 0 or hi < lo:
        raise InvalidSpec(f"altitude range must satisfy 0 < lo <= hi, got {agl_range}")
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    ox, oy = terrain.origin_world
    if bounds is None:
        bounds = (ox, oy - terrain.extent_y, ox + terrain.extent_x, oy)
    x0, y0, x1, y1 = (float(v) for v in bounds)
    if x1 < x0 or y1 < y0:
        raise InvalidSpec("bounds must be (x_min, y_min, x_max, y_max)")
    if x0 < ox or x1 > ox + terrain.extent_x or y0 < oy - terrain.extent_y or y1 > oy:
        raise BoundsOutsideTerrain(f"sampling bounds {bounds} exceed the terrain extent")

    rng = np.random.default_rng(int(master_seed))
    accepted: list[tuple[float, float, float, float]] = []
    draws = 0
    cap = 100 * n
    while len(accepted) < n:
        if draws >= cap:
            raise ResampleExhausted(f"only {len(accepted)} of {n} samples found in {cap} draws")
        chunk = min(max(n - len(accepted), 64), cap - draws)
        u = rng.random((chunk, 4))
        xs = x0 + (x1 - x0) * u[:, 0]
        ys = y0 + (y1 - y0) * u[:, 1]
        agls = lo + (hi - lo) * u[:, 2]
        yaws = 360.0 * u[:, 3]
        ok = np.isfinite(heights_at(terrain, xs, ys))
        for k in range(chunk):
            draws += 1
            if ok[k]:
                accepted.append((xs[k], ys[k], agls[k], yaws[k]))
                if len(accepted) == n:
                    break
    specs = []
    for k, (x, y, agl, yaw) in enumerate(accepted):
        att = (float(yaw), attitude[1], attitude[2]) if randomize_yaw else tuple(attitude)
        specs.append(ObservationSpec(f"obs_{k:05d}", float(x), float(y), float(agl), att, sun))
    return SampledObservations(specs, rejected=draws - n)


# --------------------------------------------------------------------------
# records and manifest
# --------------------------------------------------------------------------


@dataclass
class MapRecord:
    id: str
    kind: str  # "map" | "depth_map"
    path: str
    sun_azimuth_deg: float | None
    sun_elevation_deg: float | None
    width: int
    height: int
    gsd: float
    center_world: list[float]
    plane_z: float
    seed: int
    status: str = "ok"
    error: str | None = None


@dataclass
class ObservationRecord:
    id: str
    image_path: str
    depth_path: str
    R_WC: list[float]  # row-major 3x3
    t_WC: list[float]
    agl: float
    x: float
    y: float
    attitude: list[float]
    sun_azimuth_deg: float
    sun_elevation_deg: float
    intrinsics: dict[str, float]
    seed: int
    status: str = "ok"
    error: str | None = None

    def rotation(self) -> np.ndarray:
        return np.asarray(self.R_WC, dtype=np.float64).reshape(3, 3)


@dataclass
class Manifest:
    terrain: dict[str, Any]
    conventions: dict[str, str]
    maps: list[MapRecord]
    observations: list[ObservationRecord]
    generator_version: str
    master_seed: int
    render: dict[str, Any] = field(default_factory=dict)
    texture: dict[str, Any] | None = None

    def ok_observations(self) -> list[ObservationRecord]:
        return [r for r in self.observations if r.status == "ok"]


_HEADER_KEYS = ("terrain", "conventions", "generator_version", "master_seed")


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def write_manifest(m: Manifest, path: str | os.PathLike) -> None:
    header = {
        "record": "header",
        "terrain": m.terrain,
        "texture": m.texture,
        "conventions": m.conventions,
        "generator_version": m.generator_version,
        "master_seed": m.master_seed,
        "render": m.render,
        "n_maps": len(m.maps),
        "n_observations": len(m.observations),
    }
    lines = [_dumps(header)]
    lines += [_dumps({"record": "map", **asdict(r)}) for r in m.maps]
    lines += [_dumps({"record": "observation", **asdict(r)}) for r in m.observations]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _build(cls, obj: dict, lineno: int):
    fields = cls.__dataclass_fields__
    required = {k for k, f in fields.items() if f.default is MISSING and f.default_factory is MISSING}
    missing = required - obj.keys()
    if missing:
        raise MalformedManifest(f"line {lineno}: missing field(s) {sorted(missing)}")
    try:
        return cls(**{k: v for k, v in obj.items() if k in fields})
    except TypeError as exc:
        raise MalformedManifest(f"line {lineno}: {exc}") from exc


def read_manifest(path: str | os.PathLike) -> Manifest:
    header = None
    maps: list[MapRecord] = []
    obs: list[ObservationRecord] = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedManifest(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedManifest(f"line {lineno}: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedManifest(f"line {lineno}: record is not an object")
        kind = obj.pop("record", None)
        if kind == "header":
            if header is not None:
                raise MalformedManifest(f"line {lineno}: second header")
            missing = [k for k in _HEADER_KEYS if k not in obj]
            if missing:
                raise MalformedManifest(f"line {lineno}: header missing {missing}")
            header = obj
        elif kind == "map":
            maps.append(_build(MapRecord, obj, lineno))
        elif kind == "observation":
            obs.append(_build(ObservationRecord, obj, lineno))
        else:
            raise MalformedManifest(f"line {lineno}: unknown record type {kind!r}")
    if header is None:
        raise MalformedManifest("manifest has no header line")
    m = Manifest(
        terrain=header["terrain"],
        conventions=header["conventions"],
        maps=maps,
        observations=obs,
        generator_version=header["generator_version"],
        master_seed=header["master_seed"],
        render=header.get("render", {}),
        texture=header.get("texture"),
    )
    for key, got in (("n_maps", len(maps)), ("n_observations", len(obs))):
        if key in header and header[key] != got:
            raise MalformedManifest(f"header declares {key}={header[key]} but file holds {got}")
    ids = [r.id for r in maps] + [r.id for r in obs]
    if len(set(ids)) != len(ids):
        raise MalformedManifest("duplicate record ids")
    return m


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def map_camera_for(
    scene: SceneBundle,
    gsd: float | None = None,
    width: int | None = None,
    height: int | None = None,
    margin: float = 10.0,
) -> OrthoCamera:
    """Orthographic camera covering the whole terrain extent.

    Give ``gsd`` to derive the image size, or ``width``/``height`` to derive the gsd.
    """
    h = scene.heightfield
    if gsd is None and width is None and height is None:
        gsd = h.post_spacing
    if gsd is None:
        cands = []
        if width:
            cands.append(h.extent_x / width)
        if height:
            cands.append(h.extent_y / height)
        gsd = max(cands)
    w, hh = OrthoCamera.size_for_extent(h.extent_x, h.extent_y, gsd)
    return OrthoCamera(width or max(w, 1), height or max(hh, 1), gsd, (0.0, 0.0), scene.max_elevation + margin)


def _fmt_angle(a: float) -> str:
    return f"{a:g}"


def map_filename(sun: SunLight) -> str:
    return f"map_az{_fmt_angle(sun.azimuth_deg)}_el{_fmt_angle(sun.elevation_deg)}.png"


def _render_map(scene, cam, sun, cfg, out_dir: Path, master_seed: int, jobs: int):
    name = map_filename(sun)
    rid = name[:-4]
    seed = mix_seed(master_seed, rid)
    rec = MapRecord(
        rid, "map", f"maps/{name}", sun.azimuth_deg, sun.elevation_deg, cam.width, cam.height, cam.gsd,
        list(cam.center_world), cam.plane_z, seed,
    )
    depth = None
    try:
        rad, depth = render_image(scene, cam, sun, cfg.with_(seed=seed), jobs=jobs)
        write_png_gray8(out_dir / rec.path, expose_quantize(rad, cfg))
    except (OSError, ValueError, RuntimeError) as exc:  # recorded per item; the run continues
        logger.error("map %s failed: %s", rid, exc)
        rec.status, rec.error = "error", f"{type(exc).__name__}: {exc}"
        depth = None
    return rec, depth


def _render_observation(scene, spec: ObservationSpec, intr, cfg, out_dir: Path, master_seed: int) -> ObservationRecord:
    seed = mix_seed(master_seed, spec.id)
    rec = ObservationRecord(
        id=spec.id,
        image_path=f"obs/{spec.id}.png",
        depth_path=f"obs/{spec.id}_depth.pfm",
        R_WC=[],
        t_WC=[],
        agl=spec.agl,
        x=spec.x,
        y=spec.y,
        attitude=list(spec.attitude),
        sun_azimuth_deg=spec.sun.azimuth_deg,
        sun_elevation_deg=spec.sun.elevation_deg,
        intrinsics={"width": intr.width, "height": intr.height, "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy},
        seed=seed,
    )
    try:
        pose = place_camera(scene.bvh, scene.mesh, spec.x, spec.y, spec.agl, spec.attitude)
        rec.R_WC = pose.R_WC.reshape(-1).tolist()
        rec.t_WC = pose.t_WC.tolist()
        rad, depth = render_image(scene, (intr, pose), spec.sun, cfg.with_(seed=seed))
        write_png_gray8(out_dir / rec.image_path, expose_quantize(rad, cfg))
        write_pfm(out_dir / rec.depth_path, depth.depth)
    except (NoTerrainBelow, OSError, ValueError) as exc:
        logger.error("observation %s failed: %s", spec.id, exc)
        rec.status, rec.error = "error", f"{type(exc).__name__}: {exc}"
    return rec


def generate_dataset(
    scene: SceneBundle,
    sweep: SunSweepSpec | None,
    observations: list[ObservationSpec],
    cfg: RenderConfig,
    out_dir: str | os.PathLike,
    intrinsics: PerspectiveIntrinsics = PerspectiveIntrinsics(),
    map_camera: OrthoCamera | None = None,
    master_seed: int = 0,
    map_sun: SunLight = SunLight(),
    jobs: int = 1,
    provenance: dict[str, Any] | None = None,
) -> Manifest:
    """Render the sweep maps, one depth map and every observation, then write the manifest.

    Per-item failures are recorded in the manifest with ``status="error"``
    instead of aborting the run.
    """
    cfg.validate()
    out = Path(out_dir)
    try:
        (out / "maps").mkdir(parents=True, exist_ok=True)
        (out / "obs").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputIoError(f"cannot create output directories under {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OutputIoError(f"{out} is not writable")

    tex = scene.texture
    if tex is not None:
        fine = [s for s in observations if s.agl / intrinsics.fx < tex.pixel_scale]
        if fine:
            logger.warning(
                "%d observation(s) have a nadir ground sampling finer than the %.3g m texture "
                "(lowest agl %.1f m); imagery there is texture-limited",
                len(fine), tex.pixel_scale, min(s.agl for s in fine),
            )

    maps: list[MapRecord] = []
    if sweep is not None:
        cam = map_camera or map_camera_for(scene)
        depth_written = False
        for sun in sweep_sun_configs(sweep, map_sun.irradiance, map_sun.angular_diameter_deg):
            rec, depth = _render_map(scene, cam, sun, cfg, out, master_seed, jobs)
            logger.info("map %s: %s", rec.id, rec.status)
            maps.append(rec)
            if depth is not None and not depth_written:
                drec = MapRecord(
                    "depth", "depth_map", "maps/depth.pfm", None, None, cam.width, cam.height, cam.gsd,
                    list(cam.center_world), cam.plane_z, rec.seed,
                )
                try:
                    write_pfm(out / drec.path, depth.depth)
                except OSError as exc:
                    drec.status, drec.error = "error", f"{type(exc).__name__}: {exc}"
                depth_written = True
        if depth_written:
            maps.append(drec)

    ids = [s.id for s in observations]
    if len(set(ids)) != len(ids):
        raise InvalidSpec("observation ids must be unique")

    def job(spec):
        rec = _render_observation(scene, spec, intrinsics, cfg, out, master_seed)
        logger.info("observation %s: %s", rec.id, rec.status)
        return rec

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(job, observations))
    else:
        records = [job(s) for s in observations]
    records.sort(key=lambda r: r.id)

    h = scene.heightfield
    terrain = {"rows": h.rows, "cols": h.cols, "post_spacing": h.post_spacing, "source": h.source}
    terrain.update(provenance or {})
    manifest = Manifest(
        terrain=terrain,
        conventions=dict(CONVENTIONS),
        maps=maps,
        observations=records,
        generator_version=__version__,
        master_seed=int(master_seed),
        render=asdict(cfg),
        texture=None if tex is None else {"source": tex.source, "pixel_scale": tex.pixel_scale},
    )
    try:
        write_manifest(manifest, out / "manifest.jsonl")
    except OSError as exc:
        raise OutputIoError(f"cannot write manifest: {exc}") from exc
    return manifest


def plan_counts(sweep: SunSweepSpec | None, n_observations: int) -> dict[str, int]:
    n_maps = 0 if sweep is None else len(sweep_sun_configs(sweep))
    return {"maps": n_maps, "depth_maps": 1 if n_maps else 0, "observations": int(n_observations)}
