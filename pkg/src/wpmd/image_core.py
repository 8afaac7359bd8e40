"""Grayscale image helpers: PGM I/O, mirror padding and PSNR.

Images are plain ``float64`` numpy arrays of shape (H, W) with values in [0, 1].
"""
from __future__ import annotations

import math
import os

import numpy as np


class PGMError(ValueError):
    """Raised for malformed portable graymap files."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    return arr


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Return the next whitespace-delimited header token, skipping comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PGMError("unexpected end of header", start)
    return data[start:pos], pos


def _read_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, end = _read_token(data, pos)
    try:
        return int(tok), end
    except ValueError:
        raise PGMError(f"invalid {what} {tok!r}", end - len(tok)) from None


def parse_pgm(data: bytes) -> np.ndarray:
    magic, pos = _read_token(data, 0)
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"unsupported magic {magic!r}", 0)
    width, pos = _read_int(data, pos, "width")
    height, pos = _read_int(data, pos, "height")
    maxval, pos = _read_int(data, pos, "maxval")
    if width <= 0 or height <= 0:
        raise PGMError(f"invalid dimensions {width}x{height}", pos)
    if maxval <= 0 or maxval > 65535:
        raise PGMError(f"maxval must be in [1, 65535], got {maxval}", pos)
    count = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        pos += 1
        bpp = 1 if maxval < 256 else 2
        need = count * bpp
        payload = data[pos:pos + need]
        if len(payload) < need:
            raise PGMError(
                f"truncated payload: need {need} bytes, got {len(payload)}", pos + len(payload)
            )
        values = np.frombuffer(payload, dtype=np.uint8 if bpp == 1 else ">u2").astype(np.float64)
    else:
        values = np.empty(count, dtype=np.float64)
        for i in range(count):
            try:
                v, pos = _read_int(data, pos, "sample")
            except PGMError as err:
                raise PGMError(f"truncated payload: got {i} of {count} samples", err.offset) from None
            values[i] = v
    if values.max(initial=0) > maxval:
        raise PGMError("sample exceeds maxval", pos)
    return (values / maxval).reshape(height, width)


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def to_bytes(img) -> np.ndarray:
    img = as_image(img)
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_pgm(img, path) -> None:
    """Write ``img`` as a binary P5 graymap with maxval 255 (values rounded to nearest)."""
    raster = to_bytes(img)
    h, w = raster.shape
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())
    os.replace(tmp, path)


def save_mask_pgm(mask, path) -> None:
    save_pgm(np.asarray(mask, dtype=bool).astype(np.float64), path)


def load_mask_pgm(path) -> np.ndarray:
    return load_pgm(path) >= 0.5


def pad_symmetric(img, radius: int) -> np.ndarray:
    """Mirror-pad by ``radius`` pixels without repeating the edge pixel."""
    img = as_image(img)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius >= min(img.shape):
        raise ValueError(f"unsupported radius {radius} for image of shape {img.shape}")
    return np.pad(img, radius, mode="reflect")


def psnr(a, b) -> float:
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
