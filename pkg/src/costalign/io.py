"""File formats: XYZL point clouds, PGM masks, deterministic JSON.

XYZL is plain text, one point per line as ``x y z label`` with the label
optional (default -1) and ``#`` starting a comment line. Floats are written
with shortest round-trip repr so that write -> read is lossless and seeded
runs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidParams, MissingFile
from .geometry import PointCloud


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"no such file: {p}", path=str(p))
    return p


def read_xyzl(path) -> PointCloud:
    points = []
    labels = []
    for lineno, raw in enumerate(_require(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise InvalidParams(f"bad XYZL line {lineno}: expected 3 or 4 fields", path=str(path), line=lineno)
        points.append([float(v) for v in parts[:3]])
        labels.append(int(parts[3]) if len(parts) == 4 else -1)
    return PointCloud(np.asarray(points, dtype=np.float64).reshape(-1, 3),
                      np.asarray(labels, dtype=np.int64))


def write_xyzl(cloud: PointCloud, path) -> None:
    lines = ["# x y z label"]
    for (x, y, z), lab in zip(cloud.points, cloud.labels):
        lines.append(f"{float(x)!r} {float(y)!r} {float(z)!r} {int(lab)}")
    Path(path).write_text("\n".join(lines) + "\n")


def dump_json(obj, path, compact: bool = False) -> None:
    """Deterministic JSON: sorted keys, fixed separators, trailing newline.

    ``compact`` drops indentation (for bulky model files)."""
    if compact:
        text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    else:
        text = json.dumps(obj, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def load_json(path) -> dict:
    return json.loads(_require(path).read_text())


def points_to_lists(points: np.ndarray) -> list:
    return [[float(v) for v in row] for row in np.asarray(points).reshape(-1, 3)]


def read_pgm(path) -> np.ndarray:
    """Read a P2/P5 PGM as a binary uint8 mask (values >= 128 are foreground
    when maxval > 1, nonzero otherwise)."""
    data = _require(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise InvalidParams("not a P2/P5 PGM file", path=str(path))

    # Header tokens may be interleaved with '#' comments.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    width, height, maxval = (int(t) for t in tokens)
    if width < 1 or height < 1 or maxval < 1:
        raise InvalidParams("bad PGM header", path=str(path))

    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        if maxval > 255:
            raise InvalidParams("16-bit PGM not supported", path=str(path))
        raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    else:
        values = data[pos:].split()
        if len(values) < width * height:
            raise InvalidParams("truncated P2 raster", path=str(path))
        raster = np.array([int(v) for v in values[: width * height]], dtype=np.int64)
    img = raster.reshape(height, width)
    threshold = 128 if maxval > 1 else 1
    return (img >= threshold).astype(np.uint8)


def write_pgm(mask: np.ndarray, path) -> None:
    """Write a binary mask as ASCII P2 with maxval 1."""
    arr = (np.asarray(mask) > 0).astype(np.uint8)
    if arr.ndim != 2:
        raise InvalidParams("mask must be 2D")
    h, w = arr.shape
    rows = [" ".join(str(int(v)) for v in row) for row in arr]
    Path(path).write_text(f"P2\n{w} {h}\n1\n" + "\n".join(rows) + "\n")
