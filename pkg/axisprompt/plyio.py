"""PLY and XYZ point-file reading and writing."""

import io
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from axisprompt.exceptions import MalformedFile, UnsupportedProperty
from axisprompt.models import PointCloud

logger = logging.getLogger(__name__)

_POSITION = ("x", "y", "z")
_COLOR = ("red", "green", "blue")
_NORMAL = ("nx", "ny", "nz")
_INSTANCE = "instance_id"
_KNOWN = set(_POSITION + _COLOR + _NORMAL + (_INSTANCE,))


class PointFormat(str, Enum):
    PLY_ASCII = "ply_ascii"
    PLY_BINARY_LE = "ply_binary_le"
    XYZ_TEXT = "xyz_text"


def detect_format(data: bytes, suffix: str = "") -> PointFormat:
    """Guess the encoding from the PLY header or, failing that, the file suffix."""
    if data.startswith(b"ply"):
        header = data[:256].split(b"\n")
        if len(header) > 1 and header[1].strip().startswith(b"format ascii"):
            return PointFormat.PLY_ASCII
        return PointFormat.PLY_BINARY_LE
    if suffix.lower() == ".ply":
        raise MalformedFile("file has a .ply suffix but no PLY magic")
    return PointFormat.XYZ_TEXT


def _present(names: List[str], group: Tuple[str, ...]) -> bool:
    found = [name in names for name in group]
    if any(found) and not all(found):
        raise UnsupportedProperty(f"incomplete property group {group}: have {names}")
    return all(found)


def _parse_ply(data: bytes, fmt: PointFormat) -> PointCloud:
    try:
        ply = PlyData.read(io.BytesIO(data))
    except (PlyParseError, ValueError, EOFError, IndexError, KeyError, UnicodeDecodeError) as e:
        raise MalformedFile(f"unreadable PLY: {e}") from e

    is_ascii = fmt == PointFormat.PLY_ASCII
    if ply.text != is_ascii or (not ply.text and ply.byte_order not in ("<", "=")):
        raise MalformedFile(f"PLY encoding does not match declared format {fmt.value}")

    names = [element.name for element in ply.elements]
    if names != ["vertex"]:
        raise UnsupportedProperty(f"expected a single 'vertex' element, found {names}")
    vertex = ply["vertex"]
    properties = [prop.name for prop in vertex.properties]
    unknown = [name for name in properties if name not in _KNOWN]
    if unknown:
        raise UnsupportedProperty(f"unknown vertex properties: {unknown}")
    if not _present(properties, _POSITION):
        raise UnsupportedProperty("vertex element lacks x/y/z")

    table = vertex.data
    count = len(table)
    positions = np.stack([table[name] for name in _POSITION], axis=1).astype(np.float64)
    colors = None
    if _present(properties, _COLOR):
        colors = np.stack([table[name] for name in _COLOR], axis=1).astype(np.uint8)
    normals = None
    if _present(properties, _NORMAL):
        normals = np.stack([table[name] for name in _NORMAL], axis=1).astype(np.float64)
    instance_ids = None
    if _INSTANCE in properties:
        instance_ids = np.asarray(table[_INSTANCE], dtype=np.int64)

    labels, up_axis = _read_comments(ply.comments)
    logger.debug(f"Parsed PLY with {count} vertices and properties {properties}")
    return PointCloud(
        positions=positions.reshape(count, 3),
        colors=colors,
        normals=normals,
        instance_ids=instance_ids,
        semantic_labels=labels,
        up_axis=up_axis,
    )


def _read_comments(comments: List[str]) -> Tuple[Dict[int, str], Optional[int]]:
    labels: Dict[int, str] = {}
    up_axis = None
    for comment in comments:
        fields = comment.split(maxsplit=2)
        if len(fields) == 3 and fields[0] == "label":
            try:
                labels[int(fields[1])] = fields[2]
            except ValueError:
                logger.warning(f"Ignoring malformed label comment: {comment}")
        elif len(fields) == 2 and fields[0] == "up_axis" and fields[1] in ("0", "1", "2"):
            up_axis = int(fields[1])
    return labels, up_axis


def _parse_xyz(data: bytes) -> PointCloud:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedFile(f"XYZ file is not UTF-8 text: {e}") from e
    rows: List[List[float]] = []
    width = None
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (3, 6) or (width is not None and len(fields) != width):
            raise MalformedFile(
                f"line {number}: expected 'x y z [r g b]', got {len(fields)} fields"
            )
        width = len(fields)
        try:
            rows.append([float(f) for f in fields])
        except ValueError as e:
            raise MalformedFile(f"line {number}: {e}") from e
    table = np.asarray(rows, dtype=np.float64).reshape(-1, width or 3)
    colors = table[:, 3:6] if width == 6 else None
    if colors is not None and (np.any(colors < 0) or np.any(colors > 255)):
        raise MalformedFile("XYZ colors must lie in [0, 255]")
    return PointCloud(positions=table[:, :3], colors=colors)


def parse_point_file(data: bytes, fmt: PointFormat) -> PointCloud:
    """
    Parse a point file held in memory.

    Args:
        data: Raw file contents
        fmt: Declared encoding

    Returns:
        PointCloud with per-point order preserved

    Raises:
        MalformedFile: If the data is truncated or does not match fmt
        UnsupportedProperty: If the file declares elements or properties not read here
    """
    if fmt == PointFormat.XYZ_TEXT:
        return _parse_xyz(data)
    return _parse_ply(data, fmt)


def read_point_file(path: Path, fmt: Optional[PointFormat] = None) -> PointCloud:
    """Read a point file from disk, detecting the encoding unless given."""
    data = Path(path).read_bytes()
    return parse_point_file(data, fmt or detect_format(data, Path(path).suffix))


def write_point_file(cloud: PointCloud, fmt: PointFormat = PointFormat.PLY_BINARY_LE) -> bytes:
    """
    Serialize a cloud.

    PLY output stores x/y/z (float32), red/green/blue (uint8), nx/ny/nz
    (float32) and instance_id (int32) when present, with semantic labels as
    "label <id> <name>" header comments.
    """
    if fmt == PointFormat.XYZ_TEXT:
        lines = []
        for i, p in enumerate(cloud.positions):
            line = f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}"
            if cloud.colors is not None:
                r, g, b = cloud.colors[i]
                line += f" {r} {g} {b}"
            lines.append(line)
        return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")

    fields = [(name, "<f4") for name in _POSITION]
    if cloud.colors is not None:
        fields += [(name, "u1") for name in _COLOR]
    if cloud.normals is not None:
        fields += [(name, "<f4") for name in _NORMAL]
    if cloud.instance_ids is not None:
        fields.append((_INSTANCE, "<i4"))

    table = np.empty(len(cloud), dtype=fields)
    for k, name in enumerate(_POSITION):
        table[name] = cloud.positions[:, k]
    if cloud.colors is not None:
        for k, name in enumerate(_COLOR):
            table[name] = cloud.colors[:, k]
    if cloud.normals is not None:
        for k, name in enumerate(_NORMAL):
            table[name] = cloud.normals[:, k]
    if cloud.instance_ids is not None:
        table[_INSTANCE] = cloud.instance_ids

    comments = [f"label {i} {name}" for i, name in sorted(cloud.semantic_labels.items())]
    if cloud.up_axis is not None:
        comments.append(f"up_axis {cloud.up_axis}")
    ply = PlyData(
        [PlyElement.describe(table, "vertex")],
        text=fmt == PointFormat.PLY_ASCII,
        byte_order="<",
        comments=comments,
    )
    buffer = io.BytesIO()
    ply.write(buffer)
    return buffer.getvalue()


def write_line_set(positions: np.ndarray, edges: List[Tuple[int, int]], names: List[str]) -> bytes:
    """Binary PLY with vertex and edge elements; vertex names go into comments."""
    vertices = np.empty(len(positions), dtype=[(name, "<f4") for name in _POSITION])
    for k, name in enumerate(_POSITION):
        vertices[name] = np.asarray(positions, dtype=np.float64).reshape(-1, 3)[:, k]
    edge_table = np.array(edges, dtype=[("vertex1", "<i4"), ("vertex2", "<i4")])
    ply = PlyData(
        [PlyElement.describe(vertices, "vertex"), PlyElement.describe(edge_table, "edge")],
        text=False,
        byte_order="<",
        comments=[f"keypoint {i} {name}" for i, name in enumerate(names)],
    )
    buffer = io.BytesIO()
    ply.write(buffer)
    return buffer.getvalue()
