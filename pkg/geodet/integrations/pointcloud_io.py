"""
geodet Data Boundary
====================

Parsers and writers for every file the toolkit exchanges:

- PLY point clouds (ASCII and binary little-endian; x/y/z floats, optional
  red/green/blue uchar colors). Missing colors default to mid-gray.
- Scene annotation JSON::

    {"class_names": ["chair", ...],
     "boxes": [{"center": [x, y, z], "size": [w, l, h], "class_id": 0}, ...]}

- Detection JSON::

    {"class_names": [...],
     "scenes": [{"scene_id": "scene_000",
                 "detections": [{"center": [...], "size": [...], "class_id": 0, "score": 0.9}]}]}

- Multi-scene ground truth JSON: ``{"class_names": [...], "scenes": [{"scene_id": ..., "boxes": [...]}]}``
- Superpoint label files: newline-delimited decimal integers, one per point.

Every parser turns malformed input into a structured GeoDetException; no
other exception type escapes for any byte input.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from geodet.core.exceptions import (
    AnnotationValidationError, ParseError, PointCloudValidationError,
    SuperpointLabelError, TruncationError
)
from geodet.models.detection_models import DetectionDocument, GroundTruthDocument, SceneAnnotation, SceneBoxes
from geodet.models.pointcloud_models import PointCloud, SuperpointLabels

logger = logging.getLogger(__name__)

PLY_TYPES: Dict[str, str] = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
SUPPORTED_FORMATS = ("ascii", "binary_little_endian")
COLOR_NAMES = ("red", "green", "blue")


@dataclass
class PlyElement:
    name: str
    count: int
    line: int
    properties: List[Tuple[str, str]] = field(default_factory=list)
    has_list: bool = False

    def dtype(self) -> np.dtype:
        return np.dtype([(name, "<" + PLY_TYPES[kind]) for kind, name in self.properties])

    def property_names(self) -> List[str]:
        return [name for _, name in self.properties]


@dataclass
class PlyHeader:
    format: str
    elements: List[PlyElement]
    num_lines: int
    body_offset: int


# ===== PLY =====

def _split_header(data: bytes) -> Tuple[List[str], int]:
    """Header lines (decoded) and the byte offset where the body starts."""
    lines: List[str] = []
    offset = 0
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise ParseError("PLY header is not terminated by end_header", line=len(lines) + 1,
                             text=data[offset:offset + 80].decode("ascii", "replace"))
        raw = data[offset:end]
        offset = end + 1
        try:
            line = raw.decode("ascii").rstrip("\r")
        except UnicodeDecodeError:
            raise ParseError(f"non-ASCII byte in PLY header line {len(lines) + 1}", line=len(lines) + 1,
                             text=raw[:80].decode("ascii", "replace"))
        lines.append(line)
        if line.strip() == "end_header":
            return lines, offset


def _parse_header(data: bytes) -> PlyHeader:
    lines, body_offset = _split_header(data)
    if lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic on line 1", line=1, text=lines[0])

    fmt: Optional[str] = None
    elements: List[PlyElement] = []
    for number, line in enumerate(lines[1:-1], start=2):
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        keyword = tokens[0]
        if keyword == "format":
            if len(tokens) != 3 or tokens[2] != "1.0":
                raise ParseError(f"malformed format line {number}", line=number, text=line)
            if tokens[1] not in SUPPORTED_FORMATS:
                raise ParseError(f"unsupported PLY format '{tokens[1]}' on line {number}", line=number, text=line)
            fmt = tokens[1]
        elif keyword == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise ParseError(f"malformed element line {number}", line=number, text=line)
            elements.append(PlyElement(name=tokens[1], count=int(tokens[2]), line=number))
        elif keyword == "property":
            if not elements:
                raise ParseError(f"property before any element on line {number}", line=number, text=line)
            if tokens[-1] in elements[-1].property_names():
                raise ParseError(f"duplicate property '{tokens[-1]}' on line {number}", line=number, text=line)
            if len(tokens) == 5 and tokens[1] == "list":
                if tokens[2] not in PLY_TYPES or tokens[3] not in PLY_TYPES:
                    raise ParseError(f"unknown list type on line {number}", line=number, text=line)
                elements[-1].has_list = True
                elements[-1].properties.append(("list", tokens[4]))
            elif len(tokens) == 3 and tokens[1] in PLY_TYPES:
                elements[-1].properties.append((tokens[1], tokens[2]))
            else:
                raise ParseError(f"malformed property line {number}", line=number, text=line)
        else:
            raise ParseError(f"unexpected header keyword '{keyword}' on line {number}", line=number, text=line)

    if fmt is None:
        raise ParseError("PLY header has no format line", line=2, text=lines[1] if len(lines) > 1 else "")
    return PlyHeader(format=fmt, elements=elements, num_lines=len(lines), body_offset=body_offset)


def _vertex_element(header: PlyHeader) -> Tuple[int, PlyElement]:
    for index, element in enumerate(header.elements):
        if element.name == "vertex":
            names = element.property_names()
            for axis in ("x", "y", "z"):
                if axis not in names:
                    raise ParseError(f"vertex element lacks property '{axis}'", line=element.line,
                                     text=f"element vertex {element.count}")
            present = [name in names for name in COLOR_NAMES]
            if any(present) and not all(present):
                raise ParseError("vertex element has an incomplete red/green/blue set", line=element.line,
                                 text=f"element vertex {element.count}")
            if element.has_list:
                raise ParseError("list properties on vertices are not supported", line=element.line,
                                 text=f"element vertex {element.count}")
            return index, element
    raise ParseError("PLY file has no vertex element", line=1, text="ply")


def _read_ascii(data: bytes, header: PlyHeader, vertex_index: int, vertex: PlyElement) -> np.ndarray:
    body = [line for line in data[header.body_offset:].split(b"\n") if line.strip()]
    skip = sum(element.count for element in header.elements[:vertex_index])
    rows = body[skip:skip + vertex.count]
    if len(rows) < vertex.count:
        raise TruncationError(f"PLY declares {vertex.count} vertices but the body holds {len(rows)}",
                              line=header.num_lines + skip + len(rows) + 1,
                              details={"declared": vertex.count, "found": len(rows)})
    width = len(vertex.properties)
    values = np.empty((vertex.count, width), dtype=np.float64)
    for index, raw in enumerate(rows):
        number = header.num_lines + skip + index + 1
        try:
            tokens = raw.decode("ascii").split()
            if len(tokens) < width:
                raise ValueError(f"expected {width} values, found {len(tokens)}")
            values[index] = [float(token) for token in tokens[:width]]
        except (UnicodeDecodeError, ValueError) as e:
            raise ParseError(f"malformed vertex on line {number}: {e}", line=number,
                             text=raw[:80].decode("ascii", "replace"))
    # float properties take the precision the header declares
    with np.errstate(over="ignore"):
        columns = [values[:, i].astype(np.float32) if PLY_TYPES[kind] == "f4" else values[:, i]
                   for i, (kind, _) in enumerate(vertex.properties)]
    return np.rec.fromarrays(columns, names=vertex.property_names())


def _read_binary(data: bytes, header: PlyHeader, vertex_index: int, vertex: PlyElement) -> np.ndarray:
    offset = header.body_offset
    for element in header.elements[:vertex_index]:
        if element.has_list:
            raise ParseError(f"cannot skip element '{element.name}' with list properties before vertices",
                             line=element.line, text=f"element {element.name} {element.count}")
        offset += element.count * element.dtype().itemsize
    dtype = vertex.dtype()
    needed = vertex.count * dtype.itemsize
    available = max(len(data) - offset, 0)
    if needed > available:
        found = available // dtype.itemsize if dtype.itemsize else 0
        raise TruncationError(f"PLY declares {vertex.count} vertices but the body holds {found}",
                              details={"declared": vertex.count, "found": found})
    return np.frombuffer(data, dtype=dtype, count=vertex.count, offset=offset)


def parse_ply(data: bytes) -> PointCloud:
    """
    Parse a PLY point cloud.

    Raises:
        ParseError: malformed header (details name the line)
        TruncationError: fewer vertices than declared
        PointCloudValidationError: non-finite coordinate (details carry the point index)
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise ParseError("PLY input must be bytes")
    data = bytes(data)
    header = _parse_header(data)
    vertex_index, vertex = _vertex_element(header)
    if vertex.count == 0:
        raise PointCloudValidationError("point cloud must contain at least one point")
    if header.format == "ascii":
        records = _read_ascii(data, header, vertex_index, vertex)
    else:
        records = _read_binary(data, header, vertex_index, vertex)

    positions = np.stack([np.asarray(records[axis], dtype=np.float64) for axis in ("x", "y", "z")], axis=1)
    names = vertex.property_names()
    colors = None
    if all(name in names for name in COLOR_NAMES):
        colors = np.stack([np.asarray(records[name], dtype=np.float64) for name in COLOR_NAMES], axis=1)
        kinds = {kind for kind, name in vertex.properties if name in COLOR_NAMES}
        if kinds <= {"uchar", "uint8"}:
            colors = colors / 255.0
    else:
        logger.debug("PLY has no color properties; defaulting to mid-gray")
    cloud = PointCloud(positions=positions, colors=colors)
    logger.debug(f"Parsed {header.format} PLY with {len(cloud)} points")
    return cloud


def write_ply(cloud: PointCloud, ascii: bool = False) -> bytes:
    """Serialize as float32 xyz + uchar rgb; binary output reparses to identical float32 positions."""
    count = len(cloud)
    header = "\n".join([
        "ply",
        f"format {'ascii' if ascii else 'binary_little_endian'} 1.0",
        f"element vertex {count}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]) + "\n"
    positions = cloud.positions.astype(np.float32)
    colors = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    if ascii:
        lines = [
            " ".join(f"{v:.9g}" for v in p) + " " + " ".join(str(int(c)) for c in rgb)
            for p, rgb in zip(positions.tolist(), colors)
        ]
        return (header + "\n".join(lines) + "\n").encode("ascii")
    records = np.empty(count, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                     ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    records["x"], records["y"], records["z"] = positions[:, 0], positions[:, 1], positions[:, 2]
    records["red"], records["green"], records["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    return header.encode("ascii") + records.tobytes()


# ===== JSON DOCUMENTS =====

def _validate_json(model: type, data: Union[bytes, str], what: str) -> BaseModel:
    try:
        # json.loads parses floats exactly; validation then runs on plain objects
        document = json.loads(data)
    except (ValueError, TypeError, RecursionError) as e:
        raise AnnotationValidationError(f"invalid {what}: {e}")
    try:
        return model.model_validate(document)
    except PydanticValidationError as e:
        problems = [
            {"location": ".".join(str(part) for part in err["loc"]), "message": err["msg"]}
            for err in e.errors()
        ]
        first = problems[0] if problems else {"location": "", "message": str(e)}
        raise AnnotationValidationError(f"invalid {what}: {first['location']} {first['message']}".strip(),
                                        details={"errors": problems})


def parse_annotations(data: Union[bytes, str]) -> SceneAnnotation:
    """
    Parse and validate a scene annotation document.

    Raises:
        AnnotationValidationError: bad JSON, class id out of range, non-positive size
    """
    return _validate_json(SceneAnnotation, data, "scene annotation")


def dump_annotations(annotation: SceneAnnotation, indent: int = 2) -> bytes:
    return annotation.model_dump_json(indent=indent).encode("utf-8")


def parse_detections(data: Union[bytes, str]) -> DetectionDocument:
    return _validate_json(DetectionDocument, data, "detection document")


def dump_detections(document: DetectionDocument, indent: int = 2) -> bytes:
    return document.model_dump_json(indent=indent).encode("utf-8")


def parse_ground_truth(data: Union[bytes, str], scene_id: str = "scene") -> GroundTruthDocument:
    """Multi-scene ground truth, or a single annotation treated as one scene named ``scene_id``."""
    try:
        document = json.loads(data)
    except (ValueError, TypeError, RecursionError) as e:
        raise AnnotationValidationError(f"invalid ground truth: {e}")
    if isinstance(document, dict) and "scenes" in document:
        return _validate_json(GroundTruthDocument, data, "ground truth document")
    annotation = parse_annotations(data)
    return GroundTruthDocument(class_names=annotation.class_names,
                               scenes=[SceneBoxes(scene_id=scene_id, boxes=annotation.boxes)])


# ===== SUPERPOINTS =====

def parse_superpoints(data: Union[bytes, str], expected_n: int) -> SuperpointLabels:
    """
    Parse newline-delimited integer labels and densify them by first occurrence.

    Raises:
        SuperpointLabelError: wrong length or negative id
        ParseError: a line that is not a decimal integer
    """
    try:
        text = data.decode("ascii") if isinstance(data, (bytes, bytearray)) else str(data)
    except UnicodeDecodeError as e:
        raise ParseError(f"superpoint labels are not ASCII text: {e}")
    lines = text.rstrip().splitlines() if text.strip() else []
    raw: List[int] = []
    for number, line in enumerate(lines, start=1):
        token = line.strip()
        try:
            value = int(token)
        except ValueError:
            raise ParseError(f"superpoint label on line {number} is not an integer", line=number, text=line[:80])
        if value < 0:
            raise SuperpointLabelError(f"negative superpoint id {value} on line {number}",
                                       details={"line": number, "value": value})
        if value >= 2 ** 63:
            raise SuperpointLabelError(f"superpoint id on line {number} is too large", details={"line": number})
        raw.append(value)
    if len(raw) != expected_n:
        raise SuperpointLabelError(f"{len(raw)} superpoint labels for {expected_n} points",
                                   details={"expected": expected_n, "actual": len(raw)})
    return SuperpointLabels.densify(np.array(raw, dtype=np.int64))


def write_superpoints(labels: SuperpointLabels) -> bytes:
    return ("\n".join(str(int(i)) for i in labels.ids) + "\n").encode("ascii")


# ===== FILE HELPERS =====

def read_point_cloud(path: Union[str, Path]) -> PointCloud:
    return parse_ply(Path(path).read_bytes())


def read_annotation(path: Union[str, Path]) -> SceneAnnotation:
    return parse_annotations(Path(path).read_bytes())


def read_superpoints(path: Union[str, Path], expected_n: int) -> SuperpointLabels:
    return parse_superpoints(Path(path).read_bytes(), expected_n)


def write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    """Write a payload, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return path
