"""Single-file NIfTI-1 reader/writer (348-byte header, magic ``n+1\\0``).

Supports optional gzip containers, qform/sform affines (qform preferred),
scl_slope/scl_inter scaling, and the datatypes used by the benchmark
datasets: uint8/16/32, int16/32, float32/64. Data is stored on disk in the
native x-fastest order; in memory arrays are indexed [x, y, z].
"""

from __future__ import annotations

import gzip
import math
import struct
from pathlib import Path

import numpy as np

from .geometry import Geometry
from .volume import LabelMap, ScalarVolume

__all__ = [
    "NiftiError",
    "NiftiParseError",
    "NiftiUnsupportedError",
    "read_nifti",
    "write_nifti",
]


class NiftiError(Exception):
    """Base class for NIfTI I/O failures."""


class NiftiParseError(NiftiError):
    """Malformed file; carries the byte offset of the offending field."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class NiftiUnsupportedError(NiftiError):
    """Well-formed file using a feature outside the supported subset."""


# (name, struct format) in on-disk order; offsets derived below.
_FIELDS = [
    ("sizeof_hdr", "i"),
    ("data_type", "10s"),
    ("db_name", "18s"),
    ("extents", "i"),
    ("session_error", "h"),
    ("regular", "B"),
    ("dim_info", "B"),
    ("dim", "8h"),
    ("intent_p1", "f"),
    ("intent_p2", "f"),
    ("intent_p3", "f"),
    ("intent_code", "h"),
    ("datatype", "h"),
    ("bitpix", "h"),
    ("slice_start", "h"),
    ("pixdim", "8f"),
    ("vox_offset", "f"),
    ("scl_slope", "f"),
    ("scl_inter", "f"),
    ("slice_end", "h"),
    ("slice_code", "B"),
    ("xyzt_units", "B"),
    ("cal_max", "f"),
    ("cal_min", "f"),
    ("slice_duration", "f"),
    ("toffset", "f"),
    ("glmax", "i"),
    ("glmin", "i"),
    ("descrip", "80s"),
    ("aux_file", "24s"),
    ("qform_code", "h"),
    ("sform_code", "h"),
    ("quatern_b", "f"),
    ("quatern_c", "f"),
    ("quatern_d", "f"),
    ("qoffset_x", "f"),
    ("qoffset_y", "f"),
    ("qoffset_z", "f"),
    ("srow_x", "4f"),
    ("srow_y", "4f"),
    ("srow_z", "4f"),
    ("intent_name", "16s"),
    ("magic", "4s"),
]

_HEADER_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"

_FIELD_OFFSET = {}
_off = 0
for _name, _fmt in _FIELDS:
    _FIELD_OFFSET[_name] = _off
    _off += struct.calcsize("<" + _fmt)
assert _off == _HEADER_SIZE

_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    512: np.dtype(np.uint16),
    768: np.dtype(np.uint32),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}

_UNITS_MM = 2


def _unpack_header(raw: bytes, endian: str) -> dict:
    hdr = {}
    pos = 0
    for name, fmt in _FIELDS:
        full = endian + fmt
        size = struct.calcsize(full)
        vals = struct.unpack_from(full, raw, pos)
        hdr[name] = vals[0] if len(vals) == 1 else vals
        pos += size
    return hdr


def _quaternion_affine(hdr) -> np.ndarray:
    b, c, d = hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]
    a = 1.0 - (b * b + c * c + d * d)
    a = math.sqrt(a) if a > 0.0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ],
        dtype=np.float64,
    )
    pixdim = hdr["pixdim"]
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    scale = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * scale
    affine[:3, 3] = (hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"])
    return affine


def _rotation_quaternion(rot: np.ndarray):
    # Shoemake's method; returns (a, b, c, d) with a >= 0.
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2.0
        a = 0.25 * s
        b = (rot[2, 1] - rot[1, 2]) / s
        c = (rot[0, 2] - rot[2, 0]) / s
        d = (rot[1, 0] - rot[0, 1]) / s
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        a = (rot[2, 1] - rot[1, 2]) / s
        b = 0.25 * s
        c = (rot[0, 1] + rot[1, 0]) / s
        d = (rot[0, 2] + rot[2, 0]) / s
    elif rot[1, 1] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        a = (rot[0, 2] - rot[2, 0]) / s
        b = (rot[0, 1] + rot[1, 0]) / s
        c = 0.25 * s
        d = (rot[1, 2] + rot[2, 1]) / s
    else:
        s = math.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        a = (rot[1, 0] - rot[0, 1]) / s
        b = (rot[0, 2] + rot[2, 0]) / s
        c = (rot[1, 2] + rot[2, 1]) / s
        d = 0.25 * s
    if a < 0:
        a, b, c, d = -a, -b, -c, -d
    return a, b, c, d


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiParseError(f"corrupt gzip container: {exc}", 0) from None
    return raw


def read_nifti(path, prefer: str | None = None):
    """Read a single-file NIfTI-1 volume.

    Returns ``(volume, geometry)`` where the volume is a LabelMap for
    unscaled non-negative integer data and a ScalarVolume otherwise.
    ``prefer`` overrides the choice: ``"labels"`` accepts any data whose
    values are non-negative integers (including float-typed files),
    ``"scalar"`` always yields a ScalarVolume.
    """
    if prefer not in (None, "labels", "scalar"):
        raise ValueError(f"prefer must be None, 'labels' or 'scalar', got {prefer!r}")
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < _HEADER_SIZE:
        raise NiftiParseError(
            f"file truncated: {len(raw)} bytes, need a {_HEADER_SIZE}-byte header",
            len(raw),
        )

    (hdr_size_le,) = struct.unpack_from("<i", raw, 0)
    (hdr_size_be,) = struct.unpack_from(">i", raw, 0)
    if hdr_size_le == _HEADER_SIZE:
        endian = "<"
    elif hdr_size_be == _HEADER_SIZE:
        endian = ">"
    else:
        raise NiftiParseError(
            f"sizeof_hdr is {hdr_size_le} (LE) / {hdr_size_be} (BE), expected 348", 0
        )
    hdr = _unpack_header(raw, endian)

    if hdr["magic"] != _MAGIC_SINGLE:
        raise NiftiParseError(
            f"bad magic {hdr['magic']!r}, expected {_MAGIC_SINGLE!r}",
            _FIELD_OFFSET["magic"],
        )

    dim = hdr["dim"]
    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise NiftiParseError(f"dim[0] = {ndim} outside 3..7", _FIELD_OFFSET["dim"])
    if any(dim[1 + a] < 1 for a in range(3)):
        raise NiftiParseError(
            f"non-positive spatial dimension {dim[1:4]}", _FIELD_OFFSET["dim"]
        )
    if any(dim[1 + a] > 1 for a in range(3, ndim)):
        raise NiftiUnsupportedError(
            f"multi-frame volumes not supported (dim = {dim[:ndim + 1]})"
        )
    shape = (int(dim[1]), int(dim[2]), int(dim[3]))

    code = hdr["datatype"]
    if code not in _DTYPES:
        supported = sorted(_DTYPES)
        raise NiftiUnsupportedError(
            f"datatype code {code} not supported; supported codes: {supported}"
        )
    dtype = _DTYPES[code]

    vox_offset = int(hdr["vox_offset"])
    if vox_offset < _HEADER_SIZE:
        raise NiftiParseError(
            f"vox_offset {vox_offset} overlaps the header", _FIELD_OFFSET["vox_offset"]
        )
    count = shape[0] * shape[1] * shape[2]
    nbytes = count * dtype.itemsize
    if len(raw) < vox_offset + nbytes:
        raise NiftiParseError(
            f"data truncated: need {nbytes} bytes at offset {vox_offset}, "
            f"file has {len(raw)}",
            len(raw),
        )
    arr = np.frombuffer(raw, dtype=dtype.newbyteorder(endian), count=count,
                        offset=vox_offset)
    arr = np.ascontiguousarray(arr.reshape(shape, order="F").astype(dtype))

    pixdim = hdr["pixdim"]
    if hdr["qform_code"] > 0:
        if any(pixdim[1 + a] <= 0 for a in range(3)):
            raise NiftiParseError(
                f"qform set but pixdim {pixdim[1:4]} not positive",
                _FIELD_OFFSET["pixdim"],
            )
        affine = _quaternion_affine(hdr)
        geometry = Geometry(shape, tuple(pixdim[1:4]), affine)
    elif hdr["sform_code"] > 0:
        affine = np.eye(4)
        affine[0] = hdr["srow_x"]
        affine[1] = hdr["srow_y"]
        affine[2] = hdr["srow_z"]
        geometry = Geometry.from_affine(shape, affine)
    else:
        if any(pixdim[1 + a] <= 0 for a in range(3)):
            raise NiftiParseError(
                f"no qform/sform and pixdim {pixdim[1:4]} not positive",
                _FIELD_OFFSET["pixdim"],
            )
        geometry = Geometry(
            shape, tuple(pixdim[1:4]), np.diag([*pixdim[1:4], 1.0])
        )

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    scaled = slope != 0.0 and (slope != 1.0 or inter != 0.0)
    if scaled:
        arr = arr.astype(np.float64) * slope + inter

    integral = arr.dtype.kind in "iu"
    if prefer == "labels":
        if not integral:
            rounded = np.rint(arr)
            if not np.array_equal(rounded, arr):
                raise ValueError(f"{path}: values are not integers, cannot read as labels")
            arr = rounded.astype(np.int64)
        if arr.size and int(arr.min()) < 0:
            raise ValueError(f"{path}: negative values cannot be labels")
        volume = LabelMap(geometry, arr)
    elif prefer == "scalar" or not integral or (arr.size and int(arr.min()) < 0):
        volume = ScalarVolume(geometry, arr.astype(np.float64) if integral else arr)
    else:
        volume = LabelMap(geometry, arr)
    return volume, geometry


def _label_dtype(max_label: int) -> np.dtype:
    if max_label <= np.iinfo(np.uint8).max:
        return np.dtype(np.uint8)
    if max_label <= np.iinfo(np.uint16).max:
        return np.dtype(np.uint16)
    if max_label <= np.iinfo(np.int32).max:
        return np.dtype(np.int32)
    raise NiftiUnsupportedError(f"label {max_label} exceeds 32-bit storage")


def write_nifti(volume, path) -> None:
    """Write a ScalarVolume or LabelMap as single-file NIfTI-1.

    ``.nii.gz`` paths get a gzip container (fixed mtime, so identical
    volumes produce identical bytes). The file content is assembled in
    memory first; an unwritable destination raises before anything is
    created.
    """
    path = Path(path)
    geom = volume.geometry
    if isinstance(volume, LabelMap):
        data = volume.labels
        max_label = int(data.max()) if data.size else 0
        data = data.astype(_label_dtype(max_label))
    else:
        data = volume.values
    dtype = data.dtype
    if dtype not in _DTYPE_CODES:
        raise NiftiUnsupportedError(f"cannot store dtype {dtype}")

    spacing = np.asarray(geom.spacing)
    rot = geom.affine[:3, :3] / spacing
    qfac = 1.0
    det = np.linalg.det(rot)
    if det < 0:
        qfac = -1.0
        rot = rot.copy()
        rot[:, 2] *= -1.0
    if np.allclose(rot @ rot.T, np.eye(3), atol=1e-5):
        qform_code = 1
        _, qb, qc, qd = _rotation_quaternion(rot)
    else:
        qform_code = 0
        qb = qc = qd = 0.0

    values = {
        "sizeof_hdr": _HEADER_SIZE,
        "data_type": b"",
        "db_name": b"",
        "extents": 0,
        "session_error": 0,
        "regular": ord("r"),
        "dim_info": 0,
        "dim": (3, *geom.shape, 1, 1, 1, 1),
        "intent_p1": 0.0,
        "intent_p2": 0.0,
        "intent_p3": 0.0,
        "intent_code": 0,
        "datatype": _DTYPE_CODES[dtype],
        "bitpix": dtype.itemsize * 8,
        "slice_start": 0,
        "pixdim": (qfac, *geom.spacing, 0.0, 0.0, 0.0, 0.0),
        "vox_offset": 352.0,
        "scl_slope": 1.0,
        "scl_inter": 0.0,
        "slice_end": 0,
        "slice_code": 0,
        "xyzt_units": _UNITS_MM,
        "cal_max": 0.0,
        "cal_min": 0.0,
        "slice_duration": 0.0,
        "toffset": 0.0,
        "glmax": 0,
        "glmin": 0,
        "descrip": b"segsynth",
        "aux_file": b"",
        "qform_code": qform_code,
        "sform_code": 1,
        "quatern_b": qb,
        "quatern_c": qc,
        "quatern_d": qd,
        "qoffset_x": geom.affine[0, 3],
        "qoffset_y": geom.affine[1, 3],
        "qoffset_z": geom.affine[2, 3],
        "srow_x": tuple(geom.affine[0]),
        "srow_y": tuple(geom.affine[1]),
        "srow_z": tuple(geom.affine[2]),
        "intent_name": b"",
        "magic": _MAGIC_SINGLE,
    }
    parts = []
    for name, fmt in _FIELDS:
        val = values[name]
        if isinstance(val, tuple):
            parts.append(struct.pack("<" + fmt, *val))
        else:
            parts.append(struct.pack("<" + fmt, val))
    header = b"".join(parts)
    assert len(header) == _HEADER_SIZE

    payload = header + b"\x00" * 4 + data.tobytes(order="F")
    if path.name.endswith(".nii.gz") or path.name.endswith(".gz"):
        import io

        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(payload)
        payload = buf.getvalue()
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc
