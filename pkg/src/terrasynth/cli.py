"""Command-line entry point.

Exit codes: 0 success, 1 validation or domain failure, 2 I/O or load failure.

Config file (JSON; relative paths resolve against the config file's directory)::

    {
      "terrain": "dtm.hfg",
      "texture": {"path": "ortho.pgm", "pixel_scale": 0.25},
      "resample_fraction": 1.0,
      "constant_albedo": 0.5,
      "sun": {"azimuth_deg": 180, "elevation_deg": 40, "irradiance": 590, "angular_diameter_deg": 0.35},
      "render": {"aa_samples": 1, "shadow_samples": 4, "ambient_fraction": 0.05, ...},
      "intrinsics": {"width": 512, "height": 512, "fx": 256, "fy": 256, "cx": 256, "cy": 256},
      "map": {"gsd": 0.25, "width": null, "height": null},
      "sweep": {"azimuth_step_deg": 45, "elevations_deg": [30, 60, 90]},
      "observations": {"n": 4500, "agl_range": [64, 200], "bounds": null,
                       "attitude": [0, 0, 0], "randomize_yaw": false},
      "output_dir": "out",
      "master_seed": 0,
      "jobs": 1,
      "leaf_size": 4
    }
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from . import __version__
from .dataset import (
    InvalidSpec,
    OutputIoError,
    SunSweepSpec,
    generate_dataset,
    plan_counts,
    sample_observations,
)
from .ingest import IngestError, check_coregistration, load_terrain, load_texture, probe_terrain
from .render import InvalidConfig, RenderConfig, SceneBundle
from .scene import ElevationOutOfRange, OrthoCamera, PerspectiveIntrinsics, SunLight
from .terrain import FractionOutOfRange, Missing, height_at, resample, resampled_shape

logger = logging.getLogger("terrasynth")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObservationSampling:
    n: int = 4500
    agl_range: tuple[float, float] = (64.0, 200.0)
    bounds: tuple[float, float, float, float] | None = None
    attitude: tuple[float, float, float] = (0.0, 0.0, 0.0)
    randomize_yaw: bool = False


@dataclass(frozen=True)
class MapSpec:
    gsd: float | None = None
    width: int | None = None
    height: int | None = None


def _tuple(v):
    return None if v is None else tuple(v)


def _sub(cls, d: dict | None, where: str, **conv):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"'{where}' must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown key(s) in '{where}': {sorted(extra)}")
    kw = {k: conv[k](v) if k in conv else v for k, v in d.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{where}': {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    terrain: str
    texture: str | None = None
    texture_pixel_scale: float | None = None
    resample_fraction: float = 1.0
    constant_albedo: float = 0.5
    sun: SunLight = field(default_factory=SunLight)
    render: RenderConfig = field(default_factory=RenderConfig)
    intrinsics: PerspectiveIntrinsics = field(default_factory=PerspectiveIntrinsics)
    map: MapSpec = field(default_factory=MapSpec)
    sweep: SunSweepSpec | None = field(default_factory=SunSweepSpec)
    observations: ObservationSampling = field(default_factory=ObservationSampling)
    output_dir: str = "out"
    master_seed: int = 0
    jobs: int = 1
    leaf_size: int = 4
    base_dir: str = "."

    _TOP = (
        "terrain", "texture", "resample_fraction", "constant_albedo", "sun", "render", "intrinsics",
        "map", "sweep", "observations", "output_dir", "master_seed", "jobs", "leaf_size",
    )

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | os.PathLike = ".") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        extra = set(d) - set(cls._TOP)
        if extra:
            raise ConfigError(f"unknown config key(s): {sorted(extra)}")
        if "terrain" not in d:
            raise ConfigError("config needs a 'terrain' path")
        tex = d.get("texture")
        tex_path = tex_scale = None
        if tex is not None:
            if not isinstance(tex, dict) or "path" not in tex or "pixel_scale" not in tex:
                raise ConfigError("'texture' must be {\"path\": ..., \"pixel_scale\": ...}")
            tex_path, tex_scale = str(tex["path"]), float(tex["pixel_scale"])
        sweep = d.get("sweep", {})
        try:
            cfg = cls(
                terrain=str(d["terrain"]),
                texture=tex_path,
                texture_pixel_scale=tex_scale,
                resample_fraction=float(d.get("resample_fraction", 1.0)),
                constant_albedo=float(d.get("constant_albedo", 0.5)),
                sun=_sub(SunLight, d.get("sun"), "sun"),
                render=_sub(RenderConfig, d.get("render"), "render"),
                intrinsics=_sub(PerspectiveIntrinsics, d.get("intrinsics"), "intrinsics"),
                map=_sub(MapSpec, d.get("map"), "map"),
                sweep=None if sweep is None else _sub(SunSweepSpec, sweep, "sweep", elevations_deg=tuple),
                observations=_sub(
                    ObservationSampling, d.get("observations"), "observations",
                    agl_range=tuple, bounds=_tuple, attitude=tuple,
                ),
                output_dir=str(d.get("output_dir", "out")),
                master_seed=int(d.get("master_seed", 0)),
                jobs=int(d.get("jobs", 1)),
                leaf_size=int(d.get("leaf_size", 4)),
                base_dir=str(base_dir),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return cfg

    def to_dict(self) -> dict[str, Any]:
        def plain(obj):
            out = asdict(obj)
            return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

        return {
            "terrain": self.terrain,
            "texture": None if self.texture is None else {"path": self.texture, "pixel_scale": self.texture_pixel_scale},
            "resample_fraction": self.resample_fraction,
            "constant_albedo": self.constant_albedo,
            "sun": plain(self.sun),
            "render": plain(self.render),
            "intrinsics": plain(self.intrinsics),
            "map": plain(self.map),
            "sweep": None if self.sweep is None else plain(self.sweep),
            "observations": plain(self.observations),
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
            "jobs": self.jobs,
            "leaf_size": self.leaf_size,
        }

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def validate(self) -> "RunConfig":
        """Range checks; raises ConfigError.  File existence is checked separately (I/O)."""
        if not (0.0 < self.resample_fraction <= 1.0):
            raise ConfigError("resample_fraction must lie in (0, 1]")
        if self.texture is not None and not (self.texture_pixel_scale and self.texture_pixel_scale > 0):
            raise ConfigError("texture pixel_scale must be positive")
        if not (0.0 <= self.constant_albedo <= 1.0):
            raise ConfigError("constant_albedo must lie in [0, 1]")
        try:
            self.render.validate()
        except InvalidConfig as exc:
            raise ConfigError(str(exc)) from exc
        o = self.observations
        if o.n < 0:
            raise ConfigError("observations.n must be >= 0")
        if len(o.agl_range) != 2 or not (0 < o.agl_range[0] <= o.agl_range[1]):
            raise ConfigError("observations.agl_range must be [lo, hi] with 0 < lo <= hi")
        if o.bounds is not None and len(o.bounds) != 4:
            raise ConfigError("observations.bounds must be [x_min, y_min, x_max, y_max]")
        if len(o.attitude) != 3:
            raise ConfigError("observations.attitude must be [yaw, pitch, roll]")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.leaf_size < 1:
            raise ConfigError("leaf_size must be >= 1")
        if self.map.gsd is not None and not self.map.gsd > 0:
            raise ConfigError("map.gsd must be positive")
        if not (0 <= self.master_seed < 1 << 64):
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        return self

    def check_files(self) -> None:
        for p in [self.terrain] + ([self.texture] if self.texture else []):
            if not self.resolve(p).is_file():
                raise FileNotFoundError(f"referenced file not found: {self.resolve(p)}")


def load_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON: {exc}") from exc
    return RunConfig.from_dict(d, p.parent)


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    kw: dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        kw["master_seed"] = args.seed
    if getattr(args, "out", None) is not None:
        kw["output_dir"] = str(Path(args.out).resolve())
    if getattr(args, "resample", None) is not None:
        kw["resample_fraction"] = args.resample
    if getattr(args, "jobs", None) is not None:
        kw["jobs"] = args.jobs
    if getattr(args, "n_obs", None) is not None:
        kw["observations"] = replace(cfg.observations, n=args.n_obs)
    return replace(cfg, **kw)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_inspect(args) -> int:
    h = load_terrain(args.terrain)
    print(f"terrain: {args.terrain}")
    print(f"dims: {h.rows} rows x {h.cols} cols")
    print(f"post_spacing: {h.post_spacing:g} m")
    print(f"extent: {h.extent_x:g} m x {h.extent_y:g} m")
    print(f"nodata_fraction: {h.nodata_fraction:.6f}")
    if args.texture is None:
        return EXIT_OK
    if args.pixel_scale is None:
        raise ConfigError("--pixel-scale is required with --texture")
    t = load_texture(args.texture, args.pixel_scale)
    r = check_coregistration(h, t)
    print(f"texture: {args.texture} ({t.rows} x {t.cols}, {t.pixel_scale:g} m/px)")
    print(f"texels_per_post: {r.texels_per_post:g}")
    print(f"extent_mismatch: {r.extent_mismatch_x:g} m x {r.extent_mismatch_y:g} m (tolerance {r.tolerance:g} m)")
    print(f"coregistration: {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if r.passed else EXIT_INVALID


def cmd_probe(args) -> int:
    h = load_terrain(args.terrain)
    z = height_at(h, args.x, args.y)
    if isinstance(z, Missing):
        print(str(z))
        return EXIT_INVALID
    print(repr(float(z)))
    return EXIT_OK


def _map_size(cfg: RunConfig, rows: int, cols: int, post: float) -> tuple[int, int, float]:
    ex, ey = (cols - 1) * post, (rows - 1) * post
    m = cfg.map
    gsd = m.gsd
    if gsd is None and m.width is None and m.height is None:
        gsd = cfg.texture_pixel_scale or post
    if gsd is None:
        gsd = max(ex / m.width if m.width else 0.0, ey / m.height if m.height else 0.0)
    w, hgt = OrthoCamera.size_for_extent(ex, ey, gsd)
    return m.width or max(w, 1), m.height or max(hgt, 1), gsd


def _plan(cfg: RunConfig, command: str) -> list[str]:
    probe = probe_terrain(cfg.resolve(cfg.terrain))
    rows, cols, post = resampled_shape(probe.rows, probe.cols, probe.post_spacing, cfg.resample_fraction)
    sweep = cfg.sweep if command in ("gen-dataset", "render-map") else None
    n_obs = cfg.observations.n if command in ("gen-dataset", "render-obs") else 0
    counts = plan_counts(sweep, n_obs)
    lines = [
        f"command: {command}",
        f"terrain: {cfg.terrain} ({probe.kind}, {probe.rows} x {probe.cols} posts at {probe.post_spacing:g} m)",
        f"resampled: {rows} x {cols} posts at {post:g} m (fraction {cfg.resample_fraction:g})",
        f"maps: {counts['maps']}, depth_maps: {counts['depth_maps']}",
    ]
    if counts["maps"]:
        w, hgt, gsd = _map_size(cfg, rows, cols, post)
        lines.append(f"map_size: {w} x {hgt} (gsd {gsd:g} m)")
    i = cfg.intrinsics
    lines.append(
        f"observations: {counts['observations']} ({i.width} x {i.height}, agl "
        f"[{cfg.observations.agl_range[0]:g}, {cfg.observations.agl_range[1]:g}] m)"
    )
    lines.append(f"master_seed: {cfg.master_seed}")
    lines.append(f"output: {cfg.resolve(cfg.output_dir)}")
    return lines


def _build_scene(cfg: RunConfig) -> SceneBundle:
    h = load_terrain(cfg.resolve(cfg.terrain))
    tex = None
    if cfg.texture is not None:
        tex = load_texture(cfg.resolve(cfg.texture), cfg.texture_pixel_scale)
        rep = check_coregistration(h, tex)
        if not rep.passed:
            raise ConfigError(
                f"texture is not co-registered with the terrain (mismatch {rep.extent_mismatch_x:g} x "
                f"{rep.extent_mismatch_y:g} m, tolerance {rep.tolerance:g} m)"
            )
    if cfg.resample_fraction != 1.0:
        h = resample(h, cfg.resample_fraction)
    logger.info("terrain %d x %d posts at %g m; building BVH", h.rows, h.cols, h.post_spacing)
    return SceneBundle.build(h, tex, cfg.leaf_size, cfg.constant_albedo)


def _run_generation(cfg: RunConfig, command: str, dry_run: bool) -> int:
    cfg.validate()
    cfg.check_files()
    if dry_run:
        for line in _plan(cfg, command):
            print(line)
        return EXIT_OK
    scene = _build_scene(cfg)
    sweep = cfg.sweep if command in ("gen-dataset", "render-map") else None
    obs = []
    if command in ("gen-dataset", "render-obs") and cfg.observations.n > 0:
        o = cfg.observations
        obs = sample_observations(
            scene.heightfield, o.bounds, o.agl_range, o.n, cfg.master_seed, cfg.sun, o.attitude, o.randomize_yaw
        )
        logger.info("sampled %d observations (%d rejected over nodata)", len(obs), obs.rejected)
    w, hgt, gsd = _map_size(cfg, scene.heightfield.rows, scene.heightfield.cols, scene.heightfield.post_spacing)
    map_cam = OrthoCamera(w, hgt, gsd, (0.0, 0.0), scene.max_elevation + 10.0)
    out = cfg.resolve(cfg.output_dir)
    manifest = generate_dataset(
        scene, sweep, obs, cfg.render, out, cfg.intrinsics, map_cam, cfg.master_seed, cfg.sun, cfg.jobs,
        provenance={"source": cfg.terrain, "resample_fraction": cfg.resample_fraction},
    )
    failed = [r.id for r in manifest.maps + manifest.observations if r.status != "ok"]
    print(out / "manifest.jsonl")
    if failed:
        logger.error("%d item(s) failed: %s", len(failed), ", ".join(failed[:10]))
        return EXIT_INVALID
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    return _run_generation(cfg, args.command, args.dry_run)


def cmd_selftest(args) -> int:
    from .selftest import SUITES

    names = args.suite or list(SUITES)
    ok = True
    for name in names:
        res = SUITES[name]()
        print(res.line())
        ok &= res.passed
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="terrasynth", description="Ray-traced aerial imagery and datasets from terrain models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    s = sub.add_parser("inspect", parents=[common], help="print terrain metadata and texture co-registration")
    s.add_argument("terrain")
    s.add_argument("--texture")
    s.add_argument("--pixel-scale", type=float)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("probe", parents=[common], help="print the terrain height at world (x, y)")
    s.add_argument("terrain")
    s.add_argument("x", type=float)
    s.add_argument("y", type=float)
    s.set_defaults(func=cmd_probe)

    for name, text in (
        ("render-map", "render the sun-sweep ortho maps and depth map"),
        ("render-obs", "render the sampled perspective observations"),
        ("gen-dataset", "render maps and observations and write the manifest"),
    ):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--n-obs", type=int)
        s.add_argument("--resample", type=float)
        s.add_argument("--jobs", type=int)
        s.add_argument("--dry-run", action="store_true", help="validate and print the plan without rendering")
        s.set_defaults(func=cmd_generate)

    s = sub.add_parser("selftest", parents=[common], help="run the embedded oracle suites")
    s.add_argument("--suite", action="append", choices=["bvh", "lambert", "shadow"])
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (IngestError, OutputIoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, InvalidSpec, InvalidConfig, FractionOutOfRange, ElevationOutOfRange, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
