"""Binary PGM (P5) reading and writing, 8-bit and 16-bit.

PGM is the interchange format for every exported map: human-inspectable,
bit-exact, and trivial to parse. 16-bit samples are stored most significant
byte first, per the netpbm convention.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PgmError(ValueError):
    """Malformed or unreadable PGM content; message names the file."""


def write_pgm(path: str | Path, values: np.ndarray, maxval: int) -> Path:
    path = Path(path)
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("PGM data must be a 2-d grid")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    if values.min() < 0 or values.max() > maxval:
        raise ValueError(f"values outside 0..{maxval}")
    height, width = values.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval == 65535 else np.uint8
    path.write_bytes(header + values.astype(dtype).tobytes())
    return path


def _tokens(data: bytes, path: Path):
    """Yield header tokens, skipping '#' comments, and the payload offset."""
    i, found = 0, []
    while len(found) < 4:
        if i >= len(data):
            raise PgmError(f"{path}: truncated header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            found.append(data[i:j])
            i = j
    return found, i + 1  # single whitespace byte separates header and raster


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PgmError(f"{path}: {exc}") from exc
    (magic, w_tok, h_tok, max_tok), offset = _tokens(data, path)
    if magic != b"P5":
        raise PgmError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError as exc:
        raise PgmError(f"{path}: bad header field") from exc
    if width < 1 or height < 1 or maxval not in (255, 65535):
        raise PgmError(f"{path}: unsupported dimensions or maxval {maxval}")
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype(np.uint8)
    expected = width * height * dtype.itemsize
    raster = data[offset : offset + expected]
    if len(raster) != expected:
        raise PgmError(f"{path}: raster has {len(raster)} bytes, expected {expected}")
    values = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return values.astype(np.uint16 if maxval == 65535 else np.uint8), maxval
