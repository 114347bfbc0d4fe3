"""Single-file NIfTI-1 (.nii) reader and writer.

Only the subset this toolkit needs is supported: 3D images, datatypes
uint8 / int16 / float32, no intensity scaling, no compression. Endianness is
detected from ``sizeof_hdr``. Files written here are read back bit-exactly,
and writing the result again produces an identical byte stream.
"""
from __future__ import annotations

import os
import struct
from typing import Union

import numpy as np

from .errors import DimensionMismatch, IoFailure, MalformedHeader, UnsupportedDatatype
from .volume import BinaryMask, LabelVolume, Volume3

__all__ = ["read_nifti", "write_nifti", "read_mask", "HEADER_SIZE", "VOX_OFFSET"]

HEADER_SIZE = 348
VOX_OFFSET = 352
INTENT_LABEL = 1002

# Field order of the 348-byte header, packed without padding.
_HEADER_FMT = "i10s18sihbb8hfffhhhh8ffffhbbffffii80s24shhffffff4f4f4f16s4s"
_FIELDS = (
    ["sizeof_hdr", "data_type", "db_name", "extents", "session_error", "regular", "dim_info"]
    + [f"dim{i}" for i in range(8)]
    + ["intent_p1", "intent_p2", "intent_p3", "intent_code", "datatype", "bitpix", "slice_start"]
    + [f"pixdim{i}" for i in range(8)]
    + ["vox_offset", "scl_slope", "scl_inter", "slice_end", "slice_code", "xyzt_units"]
    + ["cal_max", "cal_min", "slice_duration", "toffset", "glmax", "glmin", "descrip", "aux_file"]
    + ["qform_code", "sform_code", "quatern_b", "quatern_c", "quatern_d"]
    + ["qoffset_x", "qoffset_y", "qoffset_z"]
    + [f"srow_x{i}" for i in range(4)]
    + [f"srow_y{i}" for i in range(4)]
    + [f"srow_z{i}" for i in range(4)]
    + ["intent_name", "magic"]
)

_DTYPES = {2: np.dtype(np.uint8), 4: np.dtype(np.int16), 16: np.dtype(np.float32)}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

Image = Union[Volume3, LabelVolume, BinaryMask]


def _unpack_header(raw: bytes) -> tuple[dict, str]:
    if len(raw) < HEADER_SIZE:
        raise MalformedHeader(f"file shorter than the {HEADER_SIZE}-byte header")
    if struct.unpack("<i", raw[:4])[0] == HEADER_SIZE:
        order = "<"
    elif struct.unpack(">i", raw[:4])[0] == HEADER_SIZE:
        order = ">"
    else:
        raise MalformedHeader("sizeof_hdr is not 348 in either byte order")
    values = struct.unpack(order + _HEADER_FMT, raw[:HEADER_SIZE])
    return dict(zip(_FIELDS, values)), order


def read_nifti(path) -> Union[Volume3, LabelVolume]:
    """Read a single-file NIfTI-1 image.

    Files carrying the label intent (as written for :class:`LabelVolume`)
    come back as label volumes; everything else as a float64 :class:`Volume3`.

    Raises
    ------
    MalformedHeader
        Bad ``sizeof_hdr``, magic other than ``n+1``, or a non-3D ``dim``.
    UnsupportedDatatype
        Datatype outside {uint8, int16, float32}, or intensity scaling present.
    DimensionMismatch
        Payload size differs from what the header declares.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    hdr, order = _unpack_header(raw)
    if hdr["magic"] != b"n+1\x00":
        raise MalformedHeader(f"unsupported magic {hdr['magic']!r} (need single-file n+1)")
    if hdr["dim0"] != 3:
        raise MalformedHeader(f"dim[0] is {hdr['dim0']}, only 3D images are supported")
    dims = (hdr["dim1"], hdr["dim2"], hdr["dim3"])
    if min(dims) < 1:
        raise MalformedHeader(f"non-positive dimensions {dims}")
    code = hdr["datatype"]
    if code not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {code} not in {sorted(_DTYPES)}")
    if hdr["scl_slope"] not in (0.0, 1.0) or hdr["scl_inter"] != 0.0:
        raise UnsupportedDatatype("intensity scaling (scl_slope/scl_inter) is not supported")
    offset = int(hdr["vox_offset"])
    if offset < VOX_OFFSET or offset != hdr["vox_offset"]:
        raise MalformedHeader(f"vox_offset {hdr['vox_offset']} is invalid")

    dtype = _DTYPES[code].newbyteorder(order)
    n = dims[0] * dims[1] * dims[2]
    payload = raw[offset:]
    if len(payload) != n * dtype.itemsize:
        raise DimensionMismatch(
            f"header declares {n} voxels ({n * dtype.itemsize} bytes), "
            f"payload holds {len(payload)} bytes"
        )
    flat = np.frombuffer(payload, dtype=dtype)
    data = flat.reshape(dims, order="F")

    spacing = tuple(float(hdr[f"pixdim{i}"]) or 1.0 for i in (1, 2, 3))
    spacing = tuple(abs(s) for s in spacing)
    if hdr["sform_code"] > 0:
        affine = np.eye(4)
        for r, axis in enumerate("xyz"):
            affine[r] = [hdr[f"srow_{axis}{i}"] for i in range(4)]
    else:
        affine = np.diag(spacing + (1.0,))

    if hdr["intent_code"] == INTENT_LABEL and code == 2:
        class_count = int(hdr["intent_p1"]) or max(int(data.max()), 1)
        return LabelVolume(data.astype(np.uint8), class_count, spacing, affine)
    return Volume3(data.astype(np.float64), spacing, affine)


def read_mask(path) -> BinaryMask:
    """Read any supported image and keep its nonzero voxels as a mask."""
    img = read_nifti(path)
    return BinaryMask(img.data != 0, img.spacing, img.affine)


def _payload_dtype(image: Image, dtype) -> np.dtype:
    if dtype is None:
        if isinstance(image, (LabelVolume, BinaryMask)):
            return np.dtype(np.uint8)
        return np.dtype(np.float32)
    dtype = np.dtype(dtype)
    if dtype not in _CODES:
        raise UnsupportedDatatype(f"cannot write dtype {dtype}")
    if isinstance(image, LabelVolume) and dtype != np.uint8:
        raise UnsupportedDatatype("label volumes are always written as uint8")
    return dtype


def write_nifti(image: Image, path, dtype=None, byteorder: str = "<") -> None:
    """Write ``image`` as a single-file NIfTI-1.

    Intensity volumes default to float32 (values rounded to the nearest
    float32), label volumes and masks to uint8. ``dtype`` may request int16
    or uint8 for intensity volumes whose values are exactly representable.
    ``byteorder`` is ``"<"`` or ``">"``.
    """
    if byteorder not in "<>" or len(byteorder) != 1:
        raise ValueError("byteorder must be '<' or '>'")
    dt = _payload_dtype(image, dtype)
    values = np.asarray(image.data)
    if dt.kind == "f":
        with np.errstate(over="ignore"):
            cast = values.astype(dt)
        if not np.all(np.isfinite(cast)):
            raise ValueError(f"volume values overflow {dt}")
    else:
        cast = values.astype(dt)
        if not np.array_equal(cast.astype(np.float64), values.astype(np.float64)):
            raise ValueError(f"volume values are not exactly representable as {dt}")

    hdr = dict.fromkeys(_FIELDS, 0)
    hdr.update(
        sizeof_hdr=HEADER_SIZE,
        data_type=b"",
        db_name=b"",
        regular=ord("r"),
        descrip=b"",
        aux_file=b"",
        intent_name=b"",
        magic=b"n+1\x00",
        datatype=_CODES[dt],
        bitpix=dt.itemsize * 8,
        vox_offset=float(VOX_OFFSET),
        scl_slope=0.0,
        xyzt_units=2,  # mm
        sform_code=1,
    )
    dims = (3,) + tuple(image.shape) + (1, 1, 1, 1)
    for i, d in enumerate(dims):
        hdr[f"dim{i}"] = d
    pix = (1.0,) + tuple(image.spacing) + (0.0, 0.0, 0.0, 0.0)
    for i, p in enumerate(pix):
        hdr[f"pixdim{i}"] = p
    for r, axis in enumerate("xyz"):
        for i in range(4):
            hdr[f"srow_{axis}{i}"] = float(image.affine[r, i])
    if isinstance(image, LabelVolume):
        hdr["intent_code"] = INTENT_LABEL
        hdr["intent_p1"] = float(image.class_count)
    if cast.size:
        hdr["cal_min"] = float(cast.min())
        hdr["cal_max"] = float(cast.max())

    header = struct.pack(byteorder + _HEADER_FMT, *(hdr[k] for k in _FIELDS))
    body = cast.astype(dt.newbyteorder(byteorder)).ravel(order="F").tobytes()
    try:
        with open(os.fspath(path), "wb") as fh:
            fh.write(header)
            fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
            fh.write(body)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
