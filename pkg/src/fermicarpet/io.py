"""File formats: binary matrices/carpets, CSV tables, PNG heatmaps."""
from __future__ import annotations

import csv
import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import SpaceGrid
from .errors import DomainError, ValidationError
from .idealgas import Carpet

_MAGIC = b"FCMATRX\x00"
_VERSION = 1
# magic, version, rows, cols, dtype tag, padding -> 64 bytes
_HEADER = struct.Struct("<8sIQQ8s28x")
_UMASK = os.umask(0)
os.umask(_UMASK)
_DTYPES = {b"f8le\x00\x00\x00\x00": "<f8", b"c16le\x00\x00\x00": "<c16"}


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_matrix(path, matrix: np.ndarray) -> None:
    """64-byte header followed by row-major little-endian values."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise DomainError("expected a 2-D matrix")
    if np.iscomplexobj(m):
        tag, body = b"c16le\x00\x00\x00", m.astype("<c16")
    else:
        tag, body = b"f8le\x00\x00\x00\x00", m.astype("<f8")
    header = _HEADER.pack(_MAGIC, _VERSION, m.shape[0], m.shape[1], tag)
    atomic_write_bytes(path, header + np.ascontiguousarray(body).tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, version, rows, cols, tag = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION or tag not in _DTYPES:
        raise ValidationError(f"{path}: unrecognized matrix file")
    dtype = np.dtype(_DTYPES[tag])
    expected = _HEADER.size + rows * cols * dtype.itemsize
    if len(raw) != expected:
        raise ValidationError(f"{path}: size {len(raw)} does not match header ({expected})")
    return np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(rows, cols).astype(dtype.newbyteorder("="))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)


def write_carpet(path, carpet: Carpet) -> None:
    """``*.carpet.bin`` plus a ``.json`` sidecar holding grid, times and metadata."""
    path = Path(path)
    write_matrix(path, carpet.density)
    side = {
        "n_points": carpet.grid.n_points,
        "rows": "time",
        "cols": "x",
        "times": [float(t) for t in carpet.times],
        "meta": _jsonable(carpet.meta),
    }
    atomic_write_text(path.with_name(path.name + ".json"), json.dumps(side, indent=1))


def read_carpet(path) -> Carpet:
    path = Path(path)
    dens = read_matrix(path)
    side = json.loads(path.with_name(path.name + ".json").read_text())
    return Carpet(SpaceGrid(side["n_points"]), np.array(side["times"]), dens, side.get("meta", {}))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with floats at 17 significant digits (round-trips exactly)."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        cols = next(r)
        data = [[float(v) for v in row] for row in r]
    return cols, np.array(data, dtype=float).reshape(-1, len(cols))


def render_heatmap(
    matrix: np.ndarray,
    path,
    scale: str = "linear",
    percentiles: tuple = (1.0, 99.0),
    cmap: str = "viridis",
    vmin: Optional[float] = None,
    vmax: Optional[float] = None,
) -> dict:
    """Write ``matrix`` as a PNG, row 0 at the bottom and column 0 at the left.

    For carpets that puts time increasing upward and x rightward.  The
    normalization goes to ``<path>.norm.txt`` so the image can be reproduced.
    """
    import matplotlib
    from PIL import Image

    m = np.asarray(matrix)
    if np.iscomplexobj(m):
        m = np.abs(m)
    m = m.astype(float)
    bad = np.argwhere(~np.isfinite(m))
    if len(bad):
        shown = ", ".join(f"({i},{j})" for i, j in bad[:20])
        more = f" and {len(bad) - 20} more" if len(bad) > 20 else ""
        raise DomainError(f"non-finite values at {shown}{more}")
    if scale == "linear":
        lo = float(m.min()) if vmin is None else vmin
        hi = float(m.max()) if vmax is None else vmax
    elif scale in ("percentile", "percentile-clipped"):
        lo, hi = (float(v) for v in np.percentile(m, percentiles))
    else:
        raise DomainError(f"unknown color scale {scale!r}")
    span = hi - lo
    norm = np.zeros_like(m) if span <= 0 else np.clip((m - lo) / span, 0.0, 1.0)
    lut = (matplotlib.colormaps[cmap](np.linspace(0, 1, 256))[:, :3] * 255).round().astype(np.uint8)
    rgb = lut[np.rint(norm * 255).astype(int)][::-1]
    buf = _io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb), "RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
    info = {"scale": scale, "vmin": lo, "vmax": hi, "cmap": cmap, "shape": list(m.shape),
            "orientation": "row 0 at bottom, column 0 at left"}
    if scale != "linear":
        info["percentiles"] = list(percentiles)
    atomic_write_text(str(path) + ".norm.txt", "".join(f"{k} = {_fmt(v)}\n" for k, v in info.items()))
    return info
