"""Point cloud container, PLY reader/writer and RGB to YUV conversion."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PointCloud",
    "YuvChannels",
    "PlyError",
    "MissingAttributeError",
    "COLOR_MATRICES",
    "load_ply",
    "save_ply",
    "rgb_to_yuv",
]


class PlyError(ValueError):
    """Raised for malformed or unsupported PLY content."""


class MissingAttributeError(ValueError):
    """Raised when an operation needs an attribute (e.g. colors) the cloud lacks."""


def _readonly(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Positions (N, 3) as float64 and optional 8-bit RGB colors (N, 3).

    Arrays are copied on construction and made read-only, so a cloud can be
    shared freely between threads.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", _readonly(pts))

        if self.colors is not None:
            raw = np.asarray(self.colors)
            if raw.shape != pts.shape:
                raise ValueError(
                    f"colors must have shape {pts.shape}, got {raw.shape}"
                )
            if raw.size and (raw.min() < 0 or raw.max() > 255):
                raise ValueError("color components must lie in [0, 255]")
            if np.issubdtype(raw.dtype, np.floating) and np.any(raw != np.round(raw)):
                raise ValueError("color components must be integers")
            object.__setattr__(self, "colors", _readonly(raw.astype(np.uint8)))

    def __len__(self):
        return self.points.shape[0]

    @property
    def has_colors(self):
        return self.colors is not None

    def with_points(self, points):
        return PointCloud(points, self.colors, self.id)

    def with_colors(self, colors):
        return PointCloud(self.points, colors, self.id)

    def same_as(self, other):
        """Exact equality of positions and colors (ids are ignored)."""
        if not np.array_equal(self.points, other.points):
            return False
        if self.has_colors != other.has_colors:
            return False
        return not self.has_colors or np.array_equal(self.colors, other.colors)


# --------------------------------------------------------------------------
# Color conversion
# --------------------------------------------------------------------------

# Full-range luma/chroma rows; chroma gets a +128 offset afterwards.
COLOR_MATRICES = {
    "bt709": np.array(
        [
            [0.2126, 0.7152, 0.0722],
            [-0.2126 / 1.8556, -0.7152 / 1.8556, 0.5],
            [0.5, -0.7152 / 1.5748, -0.0722 / 1.5748],
        ]
    ),
    "bt601": np.array(
        [
            [0.299, 0.587, 0.114],
            [-0.299 / 1.772, -0.587 / 1.772, 0.5],
            [0.5, -0.587 / 1.402, -0.114 / 1.402],
        ]
    ),
}


@dataclass(frozen=True, eq=False)
class YuvChannels:
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    matrix: str = "bt709"

    def channel(self, name):
        name = name.lower()
        if name not in ("y", "u", "v"):
            raise ValueError(f"unknown color component {name!r}")
        return getattr(self, name)


def rgb_to_yuv(cloud: PointCloud, matrix: str = "bt709") -> YuvChannels:
    """Convert the cloud's RGB colors to real-valued Y, U, V in [0, 255].

    Values are not re-quantized.  Chroma is offset by 128 and clipped to
    [0, 255]; the clip only touches saturated blue/red chroma (255.5 at most).
    """
    if not cloud.has_colors:
        raise MissingAttributeError(f"cloud {cloud.id!r} has no colors")
    try:
        m = COLOR_MATRICES[matrix]
    except KeyError:
        raise ValueError(
            f"unknown color matrix {matrix!r}; choose from {sorted(COLOR_MATRICES)}"
        ) from None
    rgb = cloud.colors.astype(np.float64)
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    y = m[0, 0] * r + m[0, 1] * g + m[0, 2] * b
    u = m[1, 0] * r + m[1, 1] * g + m[1, 2] * b + 128.0
    v = m[2, 0] * r + m[2, 1] * g + m[2, 2] * b + 128.0
    chans = [np.clip(c, 0.0, 255.0) for c in (y, u, v)]
    return YuvChannels(*(_readonly(c) for c in chans), matrix=matrix)


# --------------------------------------------------------------------------
# PLY
# --------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, numpy type code)
    has_list: bool = False


def _parse_header(fh):
    first = fh.readline()
    if first.rstrip(b"\r\n") != b"ply":
        raise PlyError("missing 'ply' magic on line 1")
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyError("unexpected end of file before 'end_header'")
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise PlyError(f"non-ASCII header content on line {lineno}") from None
        if not line or line.startswith(("comment", "obj_info")):
            continue
        parts = line.split()
        key = parts[0]
        if key == "end_header":
            break
        if key == "format":
            if len(parts) != 3 or parts[2] != "1.0":
                raise PlyError(f"bad format line {lineno}: {line!r}")
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported PLY format {parts[1]!r} (line {lineno})")
            fmt = parts[1]
        elif key == "element":
            if len(parts) != 3:
                raise PlyError(f"bad element line {lineno}: {line!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyError(f"bad element count on line {lineno}: {line!r}") from None
            if count < 0:
                raise PlyError(f"negative element count on line {lineno}")
            elements.append(_Element(parts[1], count))
        elif key == "property":
            if not elements:
                raise PlyError(f"property before any element on line {lineno}")
            if len(parts) >= 2 and parts[1] == "list":
                elements[-1].has_list = True
                elements[-1].props.append((parts[-1], None))
                continue
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise PlyError(f"bad property line {lineno}: {line!r}")
            elements[-1].props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise PlyError(f"unknown header keyword {key!r} on line {lineno}")
    if fmt is None:
        raise PlyError("header has no format line")
    return fmt, elements, lineno


def _vertex_layout(elements):
    for pos, el in enumerate(elements):
        if el.name == "vertex":
            break
    else:
        raise PlyError("header declares no 'vertex' element")
    if el.has_list:
        raise PlyError("list properties on the vertex element are not supported")
    names = [n for n, _ in el.props]
    for axis in "xyz":
        if axis not in names:
            raise PlyError(f"vertex element lacks property {axis!r}")
    present = [c in names for c in ("red", "green", "blue")]
    if any(present) and not all(present):
        raise PlyError("vertex colors need all of red, green and blue")
    if all(present):
        for c in ("red", "green", "blue"):
            if dict(el.props)[c] != "u1":
                raise PlyError(f"color property {c!r} must be uchar")
    return pos, el, all(present)


def load_ply(path) -> PointCloud:
    """Read an ASCII or binary little-endian PLY point cloud.

    Only ``x, y, z`` and, when present, ``red, green, blue`` are kept; other
    vertex properties are skipped.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh)
        vpos, vert, has_colors = _vertex_layout(elements)
        if vert.count < 1:
            raise PlyError("vertex element is empty")
        body = fh.read()
        header_bytes = fh.tell() - len(body)
    cid = os.path.splitext(os.path.basename(path))[0]
    if fmt == "ascii":
        pts, cols = _read_ascii(body, elements, vpos, vert, has_colors, header_lines)
    else:
        pts, cols = _read_binary(body, elements, vpos, vert, has_colors, header_bytes)
    return PointCloud(pts, cols, cid)


def _read_ascii(body, elements, vpos, vert, has_colors, header_lines):
    lines = body.decode("ascii", errors="replace").splitlines()
    skip = sum(el.count for el in elements[:vpos])
    first = header_lines + skip + 1  # 1-based file line of the first vertex
    rows = lines[skip: skip + vert.count]
    if len(rows) < vert.count:
        raise PlyError(
            f"vertex count mismatch: header declares {vert.count}, file has {len(rows)}"
        )
    if vpos == len(elements) - 1:
        extra = [ln for ln in lines[skip + vert.count:] if ln.strip()]
        if extra:
            raise PlyError(
                f"vertex count mismatch: {len(extra)} data line(s) beyond the "
                f"declared {vert.count} vertices"
            )
    nprops = len(vert.props)
    split = [r.split() for r in rows]
    for i, toks in enumerate(split):
        if len(toks) != nprops:
            raise PlyError(
                f"line {first + i}: expected {nprops} values, found {len(toks)}"
            )
    try:
        data = np.array(split, dtype=np.float64)
    except ValueError:
        for i, toks in enumerate(split):
            try:
                [float(t) for t in toks]
            except ValueError:
                raise PlyError(f"line {first + i}: unparsable number in {rows[i]!r}") from None
        raise
    names = [n for n, _ in vert.props]
    xyz = data[:, [names.index(a) for a in "xyz"]]
    bad = ~np.all(np.isfinite(xyz), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise PlyError(f"line {first + i}: non-finite coordinate")
    cols = None
    if has_colors:
        cols = data[:, [names.index(c) for c in ("red", "green", "blue")]]
        badc = ~np.all((cols >= 0) & (cols <= 255) & (cols == np.round(cols)), axis=1)
        if badc.any():
            i = int(np.argmax(badc))
            raise PlyError(f"line {first + i}: color value is not an integer in [0, 255]")
        cols = cols.astype(np.uint8)
    return xyz, cols


def _read_binary(body, elements, vpos, vert, has_colors, header_bytes):
    offset = 0
    for el in elements[:vpos]:
        if el.has_list:
            raise PlyError(
                f"element {el.name!r} before vertex uses list properties; not supported"
            )
        offset += el.count * np.dtype([(n, "<" + t) for n, t in el.props]).itemsize
    dtype = np.dtype([(n, "<" + t) for n, t in vert.props])
    need = vert.count * dtype.itemsize
    if len(body) < offset + need:
        have = max(len(body) - offset, 0) // dtype.itemsize
        raise PlyError(
            f"vertex count mismatch: header declares {vert.count}, payload holds {have}"
        )
    rec = np.frombuffer(body, dtype=dtype, count=vert.count, offset=offset)
    xyz = np.column_stack([rec[a].astype(np.float64) for a in "xyz"])
    bad = ~np.all(np.isfinite(xyz), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise PlyError(
            f"byte offset {header_bytes + offset + i * dtype.itemsize}: "
            f"non-finite coordinate in vertex {i}"
        )
    cols = None
    if has_colors:
        cols = np.column_stack([rec[c] for c in ("red", "green", "blue")]).astype(np.uint8)
    return xyz, cols


def _position_type(points, precision):
    if precision == "double":
        return "double"
    if precision == "float":
        return "float"
    if precision != "auto":
        raise ValueError(f"precision must be auto, float or double, got {precision!r}")
    # float32 only when it stores every coordinate exactly
    exact = np.array_equal(points.astype(np.float32).astype(np.float64), points)
    return "float" if exact else "double"


def save_ply(cloud: PointCloud, path, format: str = "binary", precision: str = "auto"):
    """Write ``cloud`` as PLY.

    ``precision="auto"`` stores positions as ``float`` when that is lossless
    and as ``double`` otherwise, so reading the file back gives identical
    coordinates.
    """
    if format not in ("ascii", "binary"):
        raise ValueError(f"format must be 'ascii' or 'binary', got {format!r}")
    path = os.fspath(path)
    if not path:
        raise OSError("empty output path")
    ptype = _position_type(cloud.points, precision)
    lines = [
        "ply",
        "format ascii 1.0" if format == "ascii" else "format binary_little_endian 1.0",
        f"element vertex {len(cloud)}",
        f"property {ptype} x",
        f"property {ptype} y",
        f"property {ptype} z",
    ]
    if cloud.has_colors:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    if format == "ascii":
        buf = io.StringIO()
        if cloud.has_colors:
            table = np.column_stack([cloud.points, cloud.colors.astype(np.float64)])
            np.savetxt(buf, table, fmt=["%.17g"] * 3 + ["%d"] * 3)
        else:
            np.savetxt(buf, cloud.points, fmt="%.17g")
        payload = buf.getvalue().encode("ascii")
    else:
        ft = "<f4" if ptype == "float" else "<f8"
        fields = [("x", ft), ("y", ft), ("z", ft)]
        if cloud.has_colors:
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        rec = np.empty(len(cloud), dtype=np.dtype(fields))
        for k, a in enumerate("xyz"):
            rec[a] = cloud.points[:, k]
        if cloud.has_colors:
            for k, c in enumerate(("red", "green", "blue")):
                rec[c] = cloud.colors[:, k]
        payload = rec.tobytes()

    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
