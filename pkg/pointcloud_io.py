"""
Text point-cloud formats.

xyz: one point per line, three whitespace-separated reals; blank lines ignored.
csv: header ``x,y,z`` then one point per row.

Coordinates are written with the shortest round-trip repr, so save/load is
lossless at 64-bit.
"""
import csv
import io
import logging
import math
import os
from typing import List, Union

import numpy as np

from errors import PointCloudFormatError
from schemas import PointFormat

logger = logging.getLogger(__name__)

CSV_HEADER = ["x", "y", "z"]


def infer_format(path: str, default: Union[PointFormat, str] = PointFormat.xyz) -> PointFormat:
    """Format from the file extension (.csv -> csv, anything else -> default)"""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        return PointFormat.csv
    if ext in (".xyz", ".txt", ".pts"):
        return PointFormat.xyz
    return PointFormat(default)


def _parse_row(fields: List[str], line: int) -> List[float]:
    if len(fields) != 3:
        raise PointCloudFormatError(f"expected 3 coordinates, got {len(fields)}", line)
    try:
        coords = [float(f) for f in fields]
    except ValueError:
        raise PointCloudFormatError(f"cannot parse coordinates {fields!r}", line)
    if not all(math.isfinite(c) for c in coords):
        raise PointCloudFormatError(f"non-finite coordinate in {fields!r}", line)
    return coords


def parse_pointcloud(text: str, fmt: Union[PointFormat, str] = PointFormat.xyz) -> np.ndarray:
    """Parse point-file text into an N×3 float64 array"""
    fmt = PointFormat(fmt)
    rows = []
    if fmt == PointFormat.xyz:
        for line_no, line in enumerate(text.splitlines(), start=1):
            if line.strip():
                rows.append(_parse_row(line.split(), line_no))
    else:
        header_seen = False
        for line_no, fields in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not fields or not any(f.strip() for f in fields):
                continue
            fields = [f.strip() for f in fields]
            if not header_seen:
                if [f.lower() for f in fields] != CSV_HEADER:
                    raise PointCloudFormatError(f"expected header 'x,y,z', got {','.join(fields)!r}", line_no)
                header_seen = True
                continue
            rows.append(_parse_row(fields, line_no))
    if not rows:
        raise PointCloudFormatError("point file contains no points")
    return np.asarray(rows, dtype=np.float64)


def decode_pointfile(raw: bytes) -> str:
    """UTF-8 text of a point file; undecodable bytes are a format error on their line"""
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line = raw[:e.start].count(b"\n") + 1
        raise PointCloudFormatError(f"invalid UTF-8 byte 0x{raw[e.start]:02x}", line) from e


def load_pointcloud(path: str, fmt: Union[PointFormat, str, None] = None) -> np.ndarray:
    """Read a point file; the format defaults to the one implied by the extension"""
    fmt = PointFormat(fmt) if fmt is not None else infer_format(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        cloud = parse_pointcloud(decode_pointfile(raw), fmt)
    except PointCloudFormatError as e:
        wrapped = PointCloudFormatError(f"{path}: {e}")
        wrapped.line = e.line
        raise wrapped from e
    logger.debug(f"[POINT_IO] loaded {cloud.shape[0]} points from {path}")
    return cloud


def format_pointcloud(cloud, fmt: Union[PointFormat, str] = PointFormat.xyz) -> str:
    fmt = PointFormat(fmt)
    pts = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(pts).all():
        raise PointCloudFormatError("refusing to write non-finite coordinates")
    sep = " " if fmt == PointFormat.xyz else ","
    lines = [sep.join(repr(float(v)) for v in row) for row in pts]
    if fmt == PointFormat.csv:
        lines.insert(0, ",".join(CSV_HEADER))
    return "\n".join(lines) + "\n"


def save_pointcloud(cloud, path: str, fmt: Union[PointFormat, str, None] = None):
    fmt = PointFormat(fmt) if fmt is not None else infer_format(path)
    text = format_pointcloud(cloud, fmt)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    logger.debug(f"[POINT_IO] wrote {np.asarray(cloud).reshape(-1, 3).shape[0]} points to {path}")
