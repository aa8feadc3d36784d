"""Grayscale raster codecs: PGM (P5), PNG (via Pillow) and PFM.

PFM files are written single-channel (``Pf``), little-endian (scale -1.0),
with rows stored bottom-to-top as the format prescribes.  Readers flip them
back so arrays are always row 0 = top of image.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image


class UnsupportedImageFormat(ValueError):
    pass


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_pgm(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read a binary PGM. Returns (samples as uint16/uint8 array, maxval)."""
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    for _ in range(4):
        tok, pos = _read_token(buf, pos)
        tokens.append(tok)
    if tokens[0] != b"P5":
        raise UnsupportedImageFormat(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise UnsupportedImageFormat(f"{path}: bad PGM header") from exc
    if not (0 < maxval < 65536) or width <= 0 or height <= 0:
        raise UnsupportedImageFormat(f"{path}: bad PGM header values")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(buf) - pos < count * dtype.itemsize:
        raise UnsupportedImageFormat(f"{path}: truncated PGM raster")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return data.reshape(height, width).astype(dtype.newbyteorder("=")), maxval


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM writer expects a 2-D array")
    if img.dtype == np.uint8:
        maxval, raw = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, raw = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"PGM writer expects uint8 or uint16, got {img.dtype}")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + raw)


def read_png_gray(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read an 8- or 16-bit grayscale PNG. Returns (samples, maxval)."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise UnsupportedImageFormat(f"{path}: not a PNG")
            mode = im.mode
            if mode == "L":
                return np.array(im, dtype=np.uint8), 255
            if mode in ("I;16", "I;16B", "I"):
                arr = np.array(im)
                if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
                    raise UnsupportedImageFormat(f"{path}: samples exceed 16 bits")
                return arr.astype(np.uint16), 65535
            raise UnsupportedImageFormat(f"{path}: unsupported PNG mode {mode!r} (grayscale only)")
    except OSError as exc:
        raise UnsupportedImageFormat(f"{path}: {exc}") from exc


def write_png_gray8(path: str | os.PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a 2-D uint8 array")
    Image.fromarray(img, mode="L").save(path, format="PNG", optimize=False)


def read_gray(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Dispatch on magic bytes: PGM (P5) or PNG."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] == b"P5":
        return read_pgm(path)
    if magic == b"\x89PNG\r\n\x1a\n":
        return read_png_gray(path)
    raise UnsupportedImageFormat(f"{path}: unrecognised image format")


def write_pfm(path: str | os.PathLike, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("PFM writer expects a 2-D array")
    h, w = data.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(data[::-1].astype("<f4")).tobytes()
    Path(path).write_bytes(header + body)


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        tok, pos = _read_token(buf, pos)
        tokens.append(tok)
    if tokens[0] != b"Pf":
        raise UnsupportedImageFormat(f"{path}: only single-channel PFM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    scale = float(tokens[3])
    pos += 1
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr[::-1].astype(np.float32)
