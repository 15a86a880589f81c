"""Readers and writers for volumes, control points and metric reports.

Volumes use a small MetaImage subset::

    ObjectType = Image
    NDims = 3
    DimSize = nx ny nz
    ElementSpacing = sx sy sz
    Offset = ox oy oz
    ElementType = MET_UCHAR | MET_SHORT | MET_FLOAT
    ElementByteOrderMSB = False
    ElementDataFile = <sibling .raw file> | LOCAL

Payloads are little-endian with x varying fastest. With ``LOCAL`` the
payload follows the header line directly.

Control-point files hold one ``x y z`` triple (millimetres) per line.
Blank lines and lines starting with ``#`` are skipped.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import BinaryVolume, ScalarVolume, Spacing

HEADER_KEYS = (
    "ObjectType",
    "NDims",
    "DimSize",
    "ElementSpacing",
    "Offset",
    "ElementType",
    "ElementByteOrderMSB",
    "ElementDataFile",
)

_MET_TO_DTYPE = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}
_DTYPE_TO_MET = {v.newbyteorder("="): k for k, v in _MET_TO_DTYPE.items()}

REPORT_KEYS = (
    "precision",
    "recall",
    "f1",
    "iou_canal",
    "iou_background",
    "miou",
    "mcd_gp_mm",
    "mcd_pg_mm",
)


class VolumeFormatError(ValueError):
    """Base class for malformed volume files."""


class MissingKeyError(VolumeFormatError):
    pass


class DimensionError(VolumeFormatError):
    pass


class UnsupportedTypeError(VolumeFormatError):
    pass


class PayloadSizeError(VolumeFormatError):
    pass


class NonBinaryError(VolumeFormatError):
    pass


class ControlPointError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ReportError(ValueError):
    pass


@dataclass
class VolumeHeader:
    dim_size: tuple[int, int, int]
    element_spacing: tuple[float, float, float]
    offset: tuple[float, float, float]
    element_type: str
    data_file: str
    ndims: int = 3
    byte_order_msb: bool = False

    @property
    def dtype(self) -> np.dtype:
        return _MET_TO_DTYPE[self.element_type]

    @property
    def payload_bytes(self) -> int:
        nx, ny, nz = self.dim_size
        return nx * ny * nz * self.dtype.itemsize


@dataclass
class ControlPointSet:
    points: np.ndarray
    side: str = "left"

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(pts) < 2:
            raise ControlPointError(f"need at least 2 control points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise ControlPointError("control points must be finite")
        self.points = pts

    def __len__(self):
        return len(self.points)


# -- volumes -----------------------------------------------------------------


def _parse_numbers(key, text, count, kind):
    parts = text.split()
    if len(parts) != count:
        raise DimensionError(f"{key} needs {count} values, got {len(parts)}: {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError:
        raise VolumeFormatError(f"{key} has a non-numeric value: {text!r}") from None


def _split_header(raw: bytes):
    """Return (fields, payload offset). Stops after ElementDataFile."""
    fields = {}
    pos = 0
    while pos < len(raw):
        end = raw.find(b"\n", pos)
        if end < 0:
            end = len(raw)
        line = raw[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        if not line:
            continue
        if "=" not in line:
            raise VolumeFormatError(f"header line at byte {pos - len(line) - 1} is not 'Key = value': {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
        if key.strip() == "ElementDataFile":
            return fields, pos
    return fields, pos


def parse_header(fields: dict) -> VolumeHeader:
    for key in HEADER_KEYS:
        if key not in fields:
            raise MissingKeyError(f"header is missing key {key}")
    if fields["ObjectType"] != "Image":
        raise VolumeFormatError(f"ObjectType must be Image, got {fields['ObjectType']!r}")
    try:
        ndims = int(fields["NDims"])
    except ValueError:
        raise DimensionError(f"NDims is not an integer: {fields['NDims']!r}") from None
    if ndims != 3:
        raise DimensionError(f"NDims must be 3, got {ndims}")
    dims = _parse_numbers("DimSize", fields["DimSize"], 3, int)
    if min(dims) < 1:
        raise DimensionError(f"DimSize must be positive, got {dims}")
    spacing = _parse_numbers("ElementSpacing", fields["ElementSpacing"], 3, float)
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise VolumeFormatError(f"ElementSpacing must be positive, got {spacing}")
    offset = _parse_numbers("Offset", fields["Offset"], 3, float)
    etype = fields["ElementType"]
    if etype not in _MET_TO_DTYPE:
        raise UnsupportedTypeError(
            f"ElementType {etype} is not supported (expected one of {', '.join(_MET_TO_DTYPE)})"
        )
    msb = fields["ElementByteOrderMSB"]
    if msb.lower() not in ("false", "0"):
        raise VolumeFormatError(f"ElementByteOrderMSB must be False, got {msb!r}")
    return VolumeHeader(dims, spacing, offset, etype, fields["ElementDataFile"], ndims)


def read_volume(path, binary: bool | None = None):
    """Read a volume file.

    ``binary=True`` demands a uint8 payload of 0/1 and returns a
    :class:`BinaryVolume`; ``binary=False`` always returns a
    :class:`ScalarVolume`. With ``None`` a uint8 payload holding only 0/1
    comes back binary and anything else scalar.
    """
    path = Path(path)
    raw = path.read_bytes()
    fields, offset = _split_header(raw)
    header = parse_header(fields)
    if header.data_file == "LOCAL":
        payload = raw[offset:]
        where = f"{path}, byte offset {offset}"
    else:
        data_path = path.parent / header.data_file
        payload = data_path.read_bytes()
        where = str(data_path)
    if len(payload) != header.payload_bytes:
        raise PayloadSizeError(
            f"{where}: payload has {len(payload)} bytes, DimSize {header.dim_size} "
            f"with {header.element_type} needs {header.payload_bytes}"
        )
    flat = np.frombuffer(payload, dtype=header.dtype)
    data = flat.reshape(header.dim_size, order="F").astype(header.dtype.newbyteorder("="))
    spacing = Spacing(*header.element_spacing)

    is01 = header.element_type == "MET_UCHAR" and bool(np.all(data <= 1))
    if binary:
        if header.element_type != "MET_UCHAR":
            raise NonBinaryError(f"{path}: binary volume needs MET_UCHAR, got {header.element_type}")
        if not is01:
            bad = int(np.flatnonzero(flat > 1)[0])
            raise NonBinaryError(f"{where}: non-binary value {int(flat[bad])} at element offset {bad}")
        return BinaryVolume(data, spacing, header.offset)
    if binary is None and is01:
        return BinaryVolume(data, spacing, header.offset)
    return ScalarVolume(data, spacing, header.offset)


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _payload_dtype(data: np.ndarray) -> np.dtype:
    dt = data.dtype.newbyteorder("=")
    if dt in _DTYPE_TO_MET:
        return dt
    if dt == np.bool_:
        return np.dtype(np.uint8)
    if dt.kind == "f":
        return np.dtype(np.float32)
    raise UnsupportedTypeError(f"cannot store dtype {data.dtype}; use uint8, int16 or float32")


def write_volume(vol, path) -> None:
    """Write ``vol`` as ``path`` (header) plus payload.

    A ``.mha`` suffix embeds the payload (``ElementDataFile = LOCAL``);
    otherwise the payload goes to a sibling ``.raw`` file. Float arrays
    other than float32 are stored as float32.
    """
    path = Path(path)
    dtype = _payload_dtype(vol.data)
    met = _DTYPE_TO_MET[dtype]
    payload = np.asarray(vol.data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    local = path.suffix.lower() == ".mha"
    data_file = "LOCAL" if local else path.with_suffix(".raw").name
    values = {
        "ObjectType": "Image",
        "NDims": "3",
        "DimSize": " ".join(str(d) for d in vol.dims),
        "ElementSpacing": " ".join(_fmt_float(s) for s in vol.spacing),
        "Offset": " ".join(_fmt_float(o) for o in vol.origin),
        "ElementType": met,
        "ElementByteOrderMSB": "False",
        "ElementDataFile": data_file,
    }
    header = "".join(f"{k} = {values[k]}\n" for k in HEADER_KEYS).encode("ascii")
    path.parent.mkdir(parents=True, exist_ok=True)
    if local:
        path.write_bytes(header + payload)
    else:
        path.write_bytes(header)
        (path.parent / data_file).write_bytes(payload)


# -- control points ----------------------------------------------------------


def parse_control_points(text: str, side: str = "left") -> ControlPointSet:
    points = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        tokens = s.split()
        if len(tokens) != 3:
            raise ControlPointError(f"expected 3 coordinates, got {len(tokens)}", lineno)
        try:
            xyz = [float(t) for t in tokens]
        except ValueError:
            raise ControlPointError(f"non-numeric token in {s!r}", lineno) from None
        # float() accepts 'nan', 'inf' and '1_0'; reject them
        if not all(math.isfinite(v) for v in xyz) or any("_" in t for t in tokens):
            raise ControlPointError(f"invalid coordinate in {s!r}", lineno)
        points.append(xyz)
    if len(points) < 2:
        raise ControlPointError(f"need at least 2 control points, got {len(points)}")
    return ControlPointSet(np.array(points), side)


def read_control_points(path, side: str = "left") -> ControlPointSet:
    return parse_control_points(Path(path).read_text(encoding="ascii"), side)


def write_control_points(points, path, comment: str | None = None) -> None:
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64).reshape(-1, 3)
    lines = [f"# {comment}"] if comment else []
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# -- reports -----------------------------------------------------------------


def format_report(record) -> str:
    """Render a metrics record as ``key value`` lines.

    ``record`` is a mapping or an object with an ``as_dict()`` method. A
    value of ``None`` is written as ``undefined``. An ``undefined`` entry
    (iterable of key names) adds a trailing line listing metrics whose
    value is a 0/0 placeholder.
    """
    if hasattr(record, "as_dict"):
        record = record.as_dict()
    missing = [k for k in REPORT_KEYS if k not in record]
    if missing:
        raise ReportError(f"metrics record is missing keys: {', '.join(missing)}")
    lines = []
    for key in REPORT_KEYS:
        value = record[key]
        lines.append(f"{key} undefined" if value is None else f"{key} {float(value):.6f}")
    undefined = list(record.get("undefined") or ())
    if undefined:
        lines.append("undefined " + ",".join(undefined))
    return "\n".join(lines) + "\n"


def write_report(record, path) -> None:
    text = format_report(record)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="ascii").splitlines():
        key, _, value = line.partition(" ")
        if key == "undefined":
            out[key] = value.split(",")
        else:
            out[key] = None if value == "undefined" else float(value)
    return out


def volume_paths(path) -> list[str]:
    """Files written by :func:`write_volume` for ``path``."""
    path = Path(path)
    if path.suffix.lower() == ".mha":
        return [os.fspath(path)]
    return [os.fspath(path), os.fspath(path.with_suffix(".raw"))]
