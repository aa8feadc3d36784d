"""Loading of elevation grids and ortho-image textures.

Two terrain encodings are understood:

* PDS3 ``.IMG`` products with an attached label (raster keyword subset only);
* ``HFG``, a small portable grid format used for fixtures::

      HFG1 <rows> <cols> <post_spacing> <nodata>\\n
      <rows*cols little-endian float32, row-major>

Grids are placed in an East-North-Up world frame whose origin is the centre
of the grid extent; row index grows southward, column index eastward.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .imageio import UnsupportedImageFormat, read_gray

__all__ = [
    "IngestError",
    "MalformedLabel",
    "UnsupportedValue",
    "TruncatedData",
    "UnsupportedSampleType",
    "MalformedHeader",
    "UnsupportedImageFormat",
    "Pds3Object",
    "Pds3Label",
    "Heightfield",
    "OrthoTexture",
    "CoregistrationReport",
    "parse_pds3_label",
    "load_dtm_pds",
    "read_pds_dtm",
    "load_dtm_grid",
    "write_dtm_grid",
    "load_terrain",
    "probe_terrain",
    "load_texture",
    "check_coregistration",
]


class IngestError(ValueError):
    pass


class MalformedLabel(IngestError):
    pass


class UnsupportedValue(IngestError):
    pass


class TruncatedData(IngestError):
    pass


class UnsupportedSampleType(IngestError):
    pass


class MalformedHeader(IngestError):
    pass


# --------------------------------------------------------------------------
# PDS3 label
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Pds3Object:
    """One OBJECT/GROUP scope of a label.  Nested scopes live in ``entries``."""

    kind: str
    name: str
    entries: dict[str, Any]
    units: dict[str, str]

    def find(self, key: str, default: Any = None) -> Any:
        """Depth-first lookup; the enclosing scope wins over nested ones."""
        if key in self.entries:
            return self.entries[key]
        for value in self.entries.values():
            if isinstance(value, Pds3Object):
                found = value.find(key, _MISSING)
                if found is not _MISSING:
                    return found
        return default

    def find_unit(self, key: str) -> str | None:
        if key in self.entries:
            return self.units.get(key)
        for value in self.entries.values():
            if isinstance(value, Pds3Object):
                unit = value.find_unit(key)
                if unit is not None or value.find(key, _MISSING) is not _MISSING:
                    return unit
        return None


_MISSING = object()


class BasedInt(int):
    """Integer written in radix notation (``16#FF7FFFFB#``); may encode a bit pattern."""


@dataclass(frozen=True)
class Pds3Label(Pds3Object):
    """Parsed label.  ``end_offset`` is where the label area ends in the file."""

    end_offset: int = 0
    text_end: int = 0

    @property
    def data_offset(self) -> int:
        """Byte offset of the ``^IMAGE`` data area (falls back to ``end_offset``)."""
        ptr = self.entries.get("^IMAGE")
        if ptr is None:
            return self.end_offset
        if isinstance(ptr, tuple):
            raise UnsupportedValue("detached ^IMAGE pointers are not supported")
        if not isinstance(ptr, int):
            raise UnsupportedValue(f"^IMAGE pointer {ptr!r} is not an integer")
        unit = (self.units.get("^IMAGE") or "").upper()
        if unit == "BYTES":
            return ptr - 1
        record_bytes = self.entries.get("RECORD_BYTES")
        if not isinstance(record_bytes, int):
            raise MalformedLabel("^IMAGE given in records but RECORD_BYTES is missing")
        return (ptr - 1) * record_bytes


_NUMBER_RE = re.compile(rb"[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?")
_INT_RE = re.compile(rb"[+-]?\d+")
_BASED_RE = re.compile(rb"([+-]?)(\d+)#([0-9A-Fa-f]+)#")
_KEY_RE = re.compile(rb"\^?[A-Za-z][A-Za-z0-9_:]*")
_WORD_DELIMS = b" \t\r\n\f\v=(){},\"'<>"


class _LabelReader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0
        self.n = len(buf)

    def skip_ws(self, newlines: bool = True) -> None:
        buf, n = self.buf, self.n
        while self.pos < n:
            c = buf[self.pos]
            if c in b" \t\f\v" or (newlines and c in b"\r\n"):
                self.pos += 1
            elif buf.startswith(b"/*", self.pos):
                end = buf.find(b"*/", self.pos + 2)
                if end < 0:
                    raise MalformedLabel("unterminated comment")
                self.pos = end + 2
            else:
                break

    def expect(self, ch: bytes) -> None:
        self.skip_ws()
        if not self.buf.startswith(ch, self.pos):
            raise MalformedLabel(f"expected {ch.decode()!r} at byte {self.pos}")
        self.pos += 1

    def keyword(self) -> str | None:
        self.skip_ws()
        if self.pos >= self.n:
            return None
        m = _KEY_RE.match(self.buf, self.pos)
        if not m:
            raise MalformedLabel(f"expected a keyword at byte {self.pos}")
        self.pos = m.end()
        return m.group().decode("ascii").upper()

    def at_assignment(self) -> bool:
        save = self.pos
        self.skip_ws(newlines=False)
        ok = self.buf.startswith(b"=", self.pos)
        self.pos = save
        return ok

    def unit(self) -> str | None:
        self.skip_ws(newlines=False)
        if not self.buf.startswith(b"<", self.pos):
            return None
        end = self.buf.find(b">", self.pos)
        nl = self.buf.find(b"\n", self.pos)
        if end < 0 or (0 <= nl < end):
            raise MalformedLabel(f"unbalanced unit brackets at byte {self.pos}")
        unit = self.buf[self.pos + 1 : end].decode("ascii").strip()
        self.pos = end + 1
        return unit

    def value(self) -> tuple[Any, str | None]:
        self.skip_ws()
        if self.pos >= self.n:
            raise MalformedLabel("missing value at end of label")
        buf = self.buf
        c = buf[self.pos : self.pos + 1]
        if c == b'"':
            end = buf.find(b'"', self.pos + 1)
            if end < 0:
                raise MalformedLabel("unbalanced double quote")
            text = buf[self.pos + 1 : end].decode("latin-1")
            self.pos = end + 1
            return " ".join(text.split()) if "\n" in text else text, None
        if c == b"'":
            end = buf.find(b"'", self.pos + 1)
            nl = buf.find(b"\n", self.pos + 1)
            if end < 0 or (0 <= nl < end):
                raise MalformedLabel("unbalanced single quote")
            text = buf[self.pos + 1 : end].decode("latin-1")
            self.pos = end + 1
            return text, None
        if c == b"(":
            self.pos += 1
            items: list[Any] = []
            while True:
                self.skip_ws()
                if self.pos >= self.n:
                    raise MalformedLabel("unbalanced parenthesis")
                if buf[self.pos : self.pos + 1] == b")":
                    self.pos += 1
                    return tuple(items), None
                item, _unit = self.value()
                items.append(item)
                self.skip_ws()
                nxt = buf[self.pos : self.pos + 1]
                if nxt == b",":
                    self.pos += 1
                elif nxt != b")":
                    raise MalformedLabel(f"unbalanced parenthesis near byte {self.pos}")
        if c == b"{":
            raise UnsupportedValue("set values {...} are outside the supported subset")
        if c == b")":
            raise MalformedLabel(f"unbalanced parenthesis at byte {self.pos}")
        if c in (b"=", b"<", b"}", b","):
            raise UnsupportedValue(f"unexpected {c.decode()!r} at byte {self.pos}")
        # bare word: number, based integer or symbol
        start = self.pos
        while self.pos < self.n and buf[self.pos] not in _WORD_DELIMS:
            self.pos += 1
        word = buf[start : self.pos]
        m = _BASED_RE.fullmatch(word)
        if m:
            sign = -1 if m.group(1) == b"-" else 1
            try:
                number = BasedInt(sign * int(m.group(3), int(m.group(2))))
            except ValueError as exc:
                raise UnsupportedValue(f"bad based integer {word!r}") from exc
            return number, self.unit()
        if _INT_RE.fullmatch(word):
            return int(word), self.unit()
        if _NUMBER_RE.fullmatch(word):
            return float(word), self.unit()
        after = self.pos
        unit = self.unit()
        if unit is not None:
            raise UnsupportedValue(f"unit attached to non-numeric value {word!r} at byte {after}")
        return word.decode("latin-1"), None


def parse_pds3_label(data: bytes) -> Pds3Label:
    """Parse the attached label at the start of ``data``.

    Only bytes up to the ``END`` statement are read.  Numeric values carrying a
    ``<unit>`` suffix are stored bare in ``entries``; the unit text is kept in
    ``units`` under the same keyword.
    """
    reader = _LabelReader(bytes(data[: 1 << 20]) if len(data) > (1 << 20) else bytes(data))
    stack: list[tuple[str, str, dict, dict]] = [("ROOT", "", {}, {})]
    while True:
        key = reader.keyword()
        if key is None:
            raise MalformedLabel("label has no END statement")
        if key == "END" and not reader.at_assignment():
            break
        reader.expect(b"=")
        if key in ("OBJECT", "GROUP"):
            name, _ = reader.value()
            if not isinstance(name, str):
                raise MalformedLabel(f"{key} name must be a symbol")
            stack.append((key, name.upper(), {}, {}))
            continue
        if key in ("END_OBJECT", "END_GROUP"):
            name, _ = reader.value()
            kind, open_name, entries, units = stack.pop() if len(stack) > 1 else (None, None, None, None)
            if kind != key[4:] or (isinstance(name, str) and name.upper() != open_name):
                raise MalformedLabel(f"{key} = {name} does not close the open scope")
            parent = stack[-1][2]
            if open_name in parent:
                raise MalformedLabel(f"duplicate keyword {open_name}")
            parent[open_name] = Pds3Object(kind, open_name, entries, units)
            continue
        value, unit = reader.value()
        entries, units = stack[-1][2], stack[-1][3]
        if key in entries:
            raise MalformedLabel(f"duplicate keyword {key}")
        entries[key] = value
        if unit is not None:
            units[key] = unit
    if len(stack) != 1:
        raise MalformedLabel(f"unclosed {stack[-1][0]} = {stack[-1][1]}")
    # consume the remainder of the END line
    nl = reader.buf.find(b"\n", reader.pos)
    text_end = reader.n if nl < 0 else nl + 1
    _, _, entries, units = stack[0]
    rb, lr = entries.get("RECORD_BYTES"), entries.get("LABEL_RECORDS")
    if isinstance(rb, int) and isinstance(lr, int):
        end_offset = rb * lr
    else:
        end_offset = text_end
    return Pds3Label("ROOT", "", entries, units, end_offset=end_offset, text_end=text_end)


# --------------------------------------------------------------------------
# Rasters
# --------------------------------------------------------------------------


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Heightfield:
    """Regular elevation grid.  ``elevations`` holds NaN wherever ``nodata_mask`` is set."""

    post_spacing: float
    elevations: np.ndarray
    nodata_mask: np.ndarray
    nodata_value: float = -9999.0
    source: str = ""

    def __post_init__(self) -> None:
        z = np.array(self.elevations, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise ValueError("elevations must be a non-empty 2-D array")
        mask = np.array(self.nodata_mask, dtype=bool)
        if mask.shape != z.shape:
            raise ValueError("nodata_mask shape differs from elevations")
        if not self.post_spacing > 0:
            raise ValueError("post_spacing must be positive")
        mask = mask | ~np.isfinite(z)
        z[mask] = np.nan
        object.__setattr__(self, "post_spacing", float(self.post_spacing))
        object.__setattr__(self, "elevations", _readonly(z))
        object.__setattr__(self, "nodata_mask", _readonly(mask))

    @classmethod
    def from_array(cls, z, post_spacing: float, nodata_mask=None, **kw) -> "Heightfield":
        z = np.asarray(z, dtype=np.float64)
        if nodata_mask is None:
            nodata_mask = ~np.isfinite(z)
        return cls(post_spacing, z, nodata_mask, **kw)

    @property
    def rows(self) -> int:
        return self.elevations.shape[0]

    @property
    def cols(self) -> int:
        return self.elevations.shape[1]

    @property
    def extent_x(self) -> float:
        return (self.cols - 1) * self.post_spacing

    @property
    def extent_y(self) -> float:
        return (self.rows - 1) * self.post_spacing

    @property
    def origin_world(self) -> tuple[float, float]:
        return (-self.extent_x / 2.0, self.extent_y / 2.0)

    def post_x(self, j):
        """World x of column ``j`` (vectorises)."""
        return self.origin_world[0] + np.asarray(j) * self.post_spacing

    def post_y(self, i):
        return self.origin_world[1] - np.asarray(i) * self.post_spacing

    @property
    def nodata_fraction(self) -> float:
        return float(self.nodata_mask.mean())


@dataclass(frozen=True, eq=False)
class OrthoTexture:
    """Grayscale albedo raster co-registered with a heightfield.

    ``origin_world`` is the centre of texel (0, 0); by default the texture is
    centred on the world origin, like a heightfield.
    """

    pixel_scale: float
    albedo: np.ndarray
    origin_world: tuple[float, float] | None = None
    source: str = ""

    def __post_init__(self) -> None:
        a = np.array(self.albedo, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise ValueError("albedo must be a non-empty 2-D array")
        if not np.all((a >= 0.0) & (a <= 1.0)):
            raise ValueError("albedo values must lie in [0, 1]")
        if not self.pixel_scale > 0:
            raise ValueError("pixel_scale must be positive")
        object.__setattr__(self, "pixel_scale", float(self.pixel_scale))
        object.__setattr__(self, "albedo", _readonly(a))
        if self.origin_world is None:
            ex = (a.shape[1] - 1) * self.pixel_scale
            ey = (a.shape[0] - 1) * self.pixel_scale
            object.__setattr__(self, "origin_world", (-ex / 2.0, ey / 2.0))
        else:
            object.__setattr__(self, "origin_world", (float(self.origin_world[0]), float(self.origin_world[1])))

    @property
    def rows(self) -> int:
        return self.albedo.shape[0]

    @property
    def cols(self) -> int:
        return self.albedo.shape[1]

    @property
    def extent_x(self) -> float:
        return (self.cols - 1) * self.pixel_scale

    @property
    def extent_y(self) -> float:
        return (self.rows - 1) * self.pixel_scale


_REAL_TYPES = {
    "IEEE_REAL": ">",
    "MAC_REAL": ">",
    "SUN_REAL": ">",
    "PC_REAL": "<",
}
_INT_TYPES = {
    "MSB_INTEGER": ">i",
    "INTEGER": ">i",
    "SUN_INTEGER": ">i",
    "MAC_INTEGER": ">i",
    "LSB_INTEGER": "<i",
    "PC_INTEGER": "<i",
    "VAX_INTEGER": "<i",
    "MSB_UNSIGNED_INTEGER": ">u",
    "UNSIGNED_INTEGER": ">u",
    "SUN_UNSIGNED_INTEGER": ">u",
    "MAC_UNSIGNED_INTEGER": ">u",
    "LSB_UNSIGNED_INTEGER": "<u",
    "PC_UNSIGNED_INTEGER": "<u",
    "VAX_UNSIGNED_INTEGER": "<u",
}


def _sample_dtype(sample_type: str, bits: int) -> np.dtype:
    st = sample_type.upper().replace(" ", "_")
    if st in _REAL_TYPES and bits in (32, 64):
        return np.dtype(f"{_REAL_TYPES[st]}f{bits // 8}")
    if st in _INT_TYPES and bits in (8, 16):
        return np.dtype(f"{_INT_TYPES[st]}{bits // 8}")
    raise UnsupportedSampleType(f"SAMPLE_TYPE={sample_type} SAMPLE_BITS={bits} is not supported")


def _require(label: Pds3Label, key: str, kind=(int,)):
    value = label.find(key)
    if value is None:
        raise MalformedLabel(f"label lacks {key}")
    if not isinstance(value, kind):
        raise UnsupportedValue(f"{key} = {value!r} has the wrong type")
    return value


_LENGTH_UNITS = {"M": 1.0, "METER": 1.0, "METERS": 1.0, "KM": 1000.0, "KILOMETER": 1000.0, "KILOMETERS": 1000.0}


def _post_spacing(label: Pds3Label) -> float:
    scale = _require(label, "MAP_SCALE", (int, float))
    unit = (label.find_unit("MAP_SCALE") or "m/pixel").upper().replace(" ", "")
    num = unit.split("/")[0]
    factor = _LENGTH_UNITS.get(num)
    if factor is None:
        raise UnsupportedValue(f"MAP_SCALE unit {unit!r} is not a length per pixel")
    return float(scale) * factor


def _missing_constant(label: Pds3Label, dtype: np.dtype):
    mc = label.find("MISSING_CONSTANT")
    if mc is None:
        return None
    if dtype.kind == "f" and isinstance(mc, BasedInt):
        bits = np.array([mc & ((1 << (8 * dtype.itemsize)) - 1)], dtype=f"u{dtype.itemsize}")
        return bits.view(f"f{dtype.itemsize}")[0]
    if not isinstance(mc, (int, float)):
        raise UnsupportedValue(f"MISSING_CONSTANT = {mc!r} is not numeric")
    return mc


def load_dtm_pds(label: Pds3Label, data: bytes, source: str = "") -> Heightfield:
    """Decode the raster area ``data`` described by ``label`` into a heightfield."""
    rows = _require(label, "LINES")
    cols = _require(label, "LINE_SAMPLES")
    if rows < 1 or cols < 1:
        raise MalformedLabel("LINES and LINE_SAMPLES must be positive")
    dtype = _sample_dtype(_require(label, "SAMPLE_TYPE", (str,)), _require(label, "SAMPLE_BITS"))
    post = _post_spacing(label)
    count = rows * cols
    if len(data) < count * dtype.itemsize:
        raise TruncatedData(f"need {count * dtype.itemsize} bytes of raster data, have {len(data)}")
    raw = np.frombuffer(data, dtype=dtype, count=count).reshape(rows, cols)
    missing = _missing_constant(label, dtype)
    mask = np.zeros((rows, cols), dtype=bool) if missing is None else raw == missing
    z = raw.astype(np.float64)
    if dtype.kind == "f":
        mask |= ~np.isfinite(z)
    scale = label.find("SCALING_FACTOR", 1.0)
    offset = label.find("OFFSET", 0.0)
    if not isinstance(scale, (int, float)) or not isinstance(offset, (int, float)):
        raise UnsupportedValue("SCALING_FACTOR/OFFSET must be numeric")
    if scale != 1.0 or offset != 0.0:
        z = z * float(scale) + float(offset)
    nodata_value = float(missing) if missing is not None and dtype.kind == "f" else -9999.0
    return Heightfield(post, z, mask, nodata_value=nodata_value, source=source)


def read_pds_dtm(path: str | os.PathLike) -> Heightfield:
    buf = Path(path).read_bytes()
    label = parse_pds3_label(buf)
    return load_dtm_pds(label, buf[label.data_offset :], source=str(path))


_HFG_MAGIC = b"HFG1"


def _parse_hfg_header(line: bytes) -> tuple[int, int, float, float]:
    parts = line.split()
    if len(parts) != 5 or parts[0] != _HFG_MAGIC:
        raise MalformedHeader(f"bad HFG header {line[:80]!r}")
    try:
        rows, cols = int(parts[1]), int(parts[2])
        post, nodata = float(parts[3]), float(parts[4])
    except ValueError as exc:
        raise MalformedHeader(f"bad HFG header {line[:80]!r}") from exc
    if rows < 1 or cols < 1 or not post > 0:
        raise MalformedHeader("HFG rows/cols/post_spacing must be positive")
    return rows, cols, post, nodata


def load_dtm_grid(path: str | os.PathLike) -> Heightfield:
    buf = Path(path).read_bytes()
    nl = buf.find(b"\n", 0, 256)
    if nl < 0:
        raise MalformedHeader(f"{path}: no HFG header line")
    rows, cols, post, nodata = _parse_hfg_header(buf[:nl])
    body = memoryview(buf)[nl + 1 :]
    need = rows * cols * 4
    if len(body) < need:
        raise TruncatedData(f"{path}: need {need} bytes of samples, have {len(body)}")
    if len(body) > need:
        raise MalformedHeader(f"{path}: {len(body) - need} trailing bytes after samples")
    raw = np.frombuffer(body, dtype="<f4", count=rows * cols).reshape(rows, cols)
    mask = np.isnan(raw) if np.isnan(nodata) else (raw == np.float32(nodata))
    return Heightfield(post, raw.astype(np.float64), mask, nodata_value=nodata, source=str(path))


def write_dtm_grid(h: Heightfield, path: str | os.PathLike) -> None:
    """Write ``h`` in HFG format.  Elevations are stored as float32."""
    nodata = float(np.float32(h.nodata_value))
    z = np.where(h.nodata_mask, nodata, h.elevations).astype("<f4")
    header = f"HFG1 {h.rows} {h.cols} {h.post_spacing!r} {nodata!r}\n".encode("ascii")
    Path(path).write_bytes(header + z.tobytes())


def load_terrain(path: str | os.PathLike) -> Heightfield:
    """Load a terrain file, choosing the decoder from its magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _HFG_MAGIC:
        return load_dtm_grid(path)
    return read_pds_dtm(path)


@dataclass(frozen=True)
class TerrainProbe:
    rows: int
    cols: int
    post_spacing: float
    kind: str

    @property
    def extent_x(self) -> float:
        return (self.cols - 1) * self.post_spacing

    @property
    def extent_y(self) -> float:
        return (self.rows - 1) * self.post_spacing


def probe_terrain(path: str | os.PathLike) -> TerrainProbe:
    """Read only the header/label of a terrain file and check the file is long enough."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(1 << 16)
    if head[:4] == _HFG_MAGIC:
        nl = head.find(b"\n")
        if nl < 0:
            raise MalformedHeader(f"{path}: no HFG header line")
        rows, cols, post, _ = _parse_hfg_header(head[:nl])
        if size - nl - 1 < rows * cols * 4:
            raise TruncatedData(f"{path}: file shorter than its header declares")
        return TerrainProbe(rows, cols, post, "hfg")
    label = parse_pds3_label(head)
    rows, cols = _require(label, "LINES"), _require(label, "LINE_SAMPLES")
    dtype = _sample_dtype(_require(label, "SAMPLE_TYPE", (str,)), _require(label, "SAMPLE_BITS"))
    if size - label.data_offset < rows * cols * dtype.itemsize:
        raise TruncatedData(f"{path}: file shorter than its label declares")
    return TerrainProbe(rows, cols, _post_spacing(label), "pds3")


def load_texture(path: str | os.PathLike, pixel_scale: float) -> OrthoTexture:
    """Load an 8/16-bit grayscale PGM or PNG as albedo in [0, 1]."""
    samples, maxval = read_gray(path)
    return OrthoTexture(pixel_scale, samples.astype(np.float64) / float(maxval), source=str(path))


@dataclass(frozen=True)
class CoregistrationReport:
    extent_mismatch_x: float
    extent_mismatch_y: float
    texels_per_post: float
    tolerance: float
    passed: bool = field(default=False)

    @property
    def pass_(self) -> bool:
        return self.passed


def check_coregistration(h: Heightfield, t: OrthoTexture) -> CoregistrationReport:
    """Compare the world footprints of a heightfield and its texture."""
    hx0, hy0 = h.origin_world
    tx0, ty0 = t.origin_world
    dx = max(abs(tx0 - hx0), abs((tx0 + t.extent_x) - (hx0 + h.extent_x)))
    dy = max(abs(ty0 - hy0), abs((ty0 - t.extent_y) - (hy0 - h.extent_y)))
    tol = 0.5 * max(h.post_spacing, t.pixel_scale)
    return CoregistrationReport(
        extent_mismatch_x=dx,
        extent_mismatch_y=dy,
        texels_per_post=h.post_spacing / t.pixel_scale,
        tolerance=tol,
        passed=bool(dx <= tol and dy <= tol),
    )
