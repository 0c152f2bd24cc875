"""Minimal PGM/PPM (binary, 8-bit) and PFM readers and writers.

Arrays are ``HxW`` for single-channel images and ``3xHxW`` for colour,
with values in [0, 1] and row 0 at the top.  The format is picked from
the file extension.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .autodiff import as_tensor
from .errors import FormatError

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _read_tokens(buf: bytes, count: int):
    pos, tokens = 0, []
    for _ in range(count):
        m = _PNM_TOKEN.match(buf, pos)
        if m is None:
            raise FormatError("truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise FormatError("missing whitespace after header")
    return tokens, pos + 1


def _load_pnm(buf: bytes) -> np.ndarray:
    tokens, start = _read_tokens(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-integer header field") from None
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}; only 255 is handled")
    if width <= 0 or height <= 0:
        raise FormatError("image dimensions must be positive")
    channels = 3 if magic == b"P6" else 1
    n = width * height * channels
    raster = buf[start : start + n]
    if len(raster) != n:
        raise FormatError("truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, 3).transpose(2, 0, 1)


def quantize(arr: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map to bytes with round-half-up."""
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _save_pnm(arr: np.ndarray, path: Path) -> None:
    if arr.ndim == 2:
        magic, h, w = b"P5", *arr.shape
        raster = quantize(arr)
    elif arr.ndim == 3 and arr.shape[0] == 3:
        magic, h, w = b"P6", *arr.shape[1:]
        raster = quantize(arr.transpose(1, 2, 0))
    else:
        raise FormatError(f"cannot write shape {arr.shape} as PGM/PPM")
    path.write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + raster.tobytes())


def _load_pfm(buf: bytes) -> np.ndarray:
    lines = buf.split(b"\n", 3)
    if len(lines) < 4:
        raise FormatError("truncated PFM header")
    magic, dims, scale_s, raster = lines
    if magic.strip() not in (b"Pf", b"PF"):
        raise FormatError(f"unsupported PFM magic {magic!r}")
    try:
        width, height = (int(t) for t in dims.split())
        scale = float(scale_s)
    except ValueError:
        raise FormatError("malformed PFM header") from None
    if scale == 0:
        raise FormatError("PFM scale must be nonzero")
    channels = 3 if magic.strip() == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = width * height * channels
    if len(raster) < 4 * n:
        raise FormatError("truncated PFM raster")
    arr = np.frombuffer(raster[: 4 * n], dtype=dtype).astype(np.float64)
    arr = arr.reshape(height, width, channels)[::-1]
    if channels == 1:
        return arr[:, :, 0].copy()
    return arr.transpose(2, 0, 1).copy()


def _save_pfm(arr: np.ndarray, path: Path) -> None:
    arr = np.clip(arr, 0.0, 1.0)
    if arr.ndim == 2:
        magic, data = b"Pf", arr[:, :, None]
    elif arr.ndim == 3 and arr.shape[0] == 3:
        magic, data = b"PF", arr.transpose(1, 2, 0)
    else:
        raise FormatError(f"cannot write shape {arr.shape} as PFM")
    h, w = data.shape[:2]
    body = np.ascontiguousarray(data[::-1]).astype("<f4").tobytes()
    path.write_bytes(magic + b"\n%d %d\n-1.0\n" % (w, h) + body)


def load_image(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    ext = path.suffix.lower()
    if ext == ".pfm":
        return _load_pfm(buf)
    if ext in (".pgm", ".ppm", ".pnm"):
        return _load_pnm(buf)
    raise FormatError(f"unsupported image extension {ext!r}")


def save_image(arr, path) -> None:
    """Write ``arr`` (clamped to [0, 1]) in the format implied by ``path``."""
    path = Path(path)
    arr = np.asarray(as_tensor(arr).data)
    ext = path.suffix.lower()
    if ext == ".pfm":
        _save_pfm(arr, path)
    elif ext in (".pgm", ".ppm", ".pnm"):
        _save_pnm(arr, path)
    else:
        raise FormatError(f"unsupported image extension {ext!r}")


def contact_sheet(images, columns: int | None = None, gap: int = 1) -> np.ndarray:
    """Tile equally shaped images into one grid (white gaps)."""
    images = [np.asarray(im) for im in images]
    if not images:
        raise FormatError("contact sheet needs at least one image")
    first = images[0]
    color = first.ndim == 3
    h, w = first.shape[-2:]
    columns = columns or len(images)
    rows = -(-len(images) // columns)
    shape = (rows * (h + gap) - gap, columns * (w + gap) - gap)
    sheet = np.ones((first.shape[0], *shape) if color else shape)
    for idx, im in enumerate(images):
        r, c = divmod(idx, columns)
        sl = (slice(r * (h + gap), r * (h + gap) + h), slice(c * (w + gap), c * (w + gap) + w))
        if color:
            sheet[(slice(None), *sl)] = im
        else:
            sheet[sl] = im
    return sheet
