"""Radiance ``.hdr`` (RGBE) reader and writer.

Written files are flat (uncompressed) scanlines; the reader also accepts
new-style run-length encoded scanlines.
"""

from __future__ import annotations

import os
import re

import numpy as np

MAGIC = b"#?RADIANCE"
FORMAT_LINE = b"FORMAT=32-bit_rle_rgbe"
_RESOLUTION = re.compile(rb"^-Y (\d+) \+X (\d+)$")


class RGBEError(ValueError):
    pass


class HeaderError(RGBEError):
    pass


class ResolutionError(RGBEError):
    pass


class TruncatedDataError(RGBEError):
    pass


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """HxWx3 floats -> HxWx4 uint8 shared-exponent pixels."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if np.any(rgb < 0) or not np.all(np.isfinite(rgb)):
        raise ValueError("RGBE encodes finite non-negative values only")
    v = rgb.max(axis=-1)
    mant, exp = np.frexp(v)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    ok = v >= 1e-32
    scale = np.zeros_like(v)
    scale[ok] = mant[ok] * 256.0 / v[ok]
    out[..., :3] = np.where(ok[..., None], np.floor(rgb * scale[..., None]), 0).astype(np.uint8)
    out[..., 3] = np.where(ok, exp + 128, 0).astype(np.uint8)
    return out


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Decode with mid-bucket reconstruction ``(m + 0.5) * 2**(e - 136)``."""
    rgbe = np.asarray(rgbe)
    e = rgbe[..., 3].astype(np.int64)
    f = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return (rgbe[..., :3].astype(np.float64) + 0.5) * f[..., None]


def header_bytes(height: int, width: int) -> bytes:
    return MAGIC + b"\n" + FORMAT_LINE + b"\n\n" + b"-Y %d +X %d\n" % (height, width)


def write_rgbe(path: str | os.PathLike, radiance: np.ndarray) -> None:
    radiance = np.asarray(radiance)
    if radiance.ndim != 3 or radiance.shape[-1] != 3:
        raise ValueError(f"radiance map must be HxWx3, got {radiance.shape}")
    h, w, _ = radiance.shape
    with open(path, "wb") as fh:
        fh.write(header_bytes(h, w))
        fh.write(float_to_rgbe(radiance).tobytes())


def _read_rle_scanline(buf: memoryview, pos: int, width: int) -> tuple[np.ndarray, int]:
    line = np.empty((4, width), dtype=np.uint8)
    for ch in range(4):
        x = 0
        while x < width:
            if pos >= len(buf):
                raise TruncatedDataError("pixel data ends inside an RLE scanline")
            count = buf[pos]
            pos += 1
            if count > 128:
                count -= 128
                if pos >= len(buf):
                    raise TruncatedDataError("pixel data ends inside an RLE run")
                if x + count > width:
                    raise RGBEError("RLE run overruns the scanline")
                line[ch, x:x + count] = buf[pos]
                pos += 1
            else:
                if count == 0 or x + count > width:
                    raise RGBEError("bad RLE literal length")
                if pos + count > len(buf):
                    raise TruncatedDataError("pixel data ends inside an RLE literal")
                line[ch, x:x + count] = np.frombuffer(buf[pos:pos + count], dtype=np.uint8)
                pos += count
            x += count
    return line.T, pos


def read_rgbe(path: str | os.PathLike) -> np.ndarray:
    """Read a Radiance picture into an HxWx3 float64 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not (data.startswith(MAGIC) or data.startswith(b"#?RGBE")):
        raise HeaderError("missing '#?RADIANCE' signature")
    end = data.find(b"\n\n")
    if end < 0:
        raise HeaderError("header is not terminated by an empty line")
    header_lines = data[:end].split(b"\n")
    fmt = [ln for ln in header_lines if ln.startswith(b"FORMAT=")]
    if fmt and fmt[-1] != FORMAT_LINE:
        raise HeaderError(f"unsupported pixel format {fmt[-1].decode(errors='replace')!r}")
    nl = data.find(b"\n", end + 2)
    if nl < 0:
        raise ResolutionError("missing resolution line")
    match = _RESOLUTION.match(data[end + 2:nl])
    if match is None:
        raise ResolutionError(f"unsupported resolution line {data[end + 2:nl][:40]!r}")
    height, width = int(match.group(1)), int(match.group(2))
    if height <= 0 or width <= 0:
        raise ResolutionError(f"bad image size {height}x{width}")

    buf = memoryview(data)[nl + 1:]
    out = np.empty((height, width, 4), dtype=np.uint8)
    pos = 0
    for y in range(height):
        if (8 <= width < 32768 and len(buf) - pos >= 4 and buf[pos] == 2 and buf[pos + 1] == 2
                and (buf[pos + 2] << 8 | buf[pos + 3]) == width and not buf[pos + 2] & 0x80):
            out[y], pos = _read_rle_scanline(buf, pos + 4, width)
        else:
            need = 4 * width
            if pos + need > len(buf):
                raise TruncatedDataError(
                    f"pixel data truncated at scanline {y} of {height} "
                    f"({len(buf) - pos} bytes left, {need} needed)")
            out[y] = np.frombuffer(buf[pos:pos + need], dtype=np.uint8).reshape(width, 4)
            pos += need
    return rgbe_to_float(out)
