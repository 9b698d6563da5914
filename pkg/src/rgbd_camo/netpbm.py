"""Binary PPM (P6) and PGM (P5) reading and writing with numpy buffers."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError("truncated netpbm header")
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def read_netpbm(path: str | Path) -> np.ndarray:
    """Return (H, W) for P5 or (H, W, 3) for P6; uint8 if maxval < 256 else uint16."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    tokens, offset = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad dimensions or maxval")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = width * height * channels
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset) if \
        len(data) - offset >= count * dtype.itemsize else None
    if raster is None:
        raise FormatError(f"{path}: raster truncated")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raster.reshape(shape).astype(np.uint8 if maxval < 256 else np.uint16)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("PPM output needs an (H, W, 3) uint8 array")
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes())


def write_pgm16(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM output needs a 2-D array")
    h, w = img.shape
    raster = np.ascontiguousarray(img.astype(">u2"))
    Path(path).write_bytes(b"P5\n%d %d\n65535\n" % (w, h) + raster.tobytes())
