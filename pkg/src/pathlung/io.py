"""Raw scalar files and a minimal single-file NIfTI-1 reader/writer.

Only what the pipeline needs: ``.nii`` / ``.nii.gz``, ``dim[0] == 3``,
int16 or float32 payloads, ``scl_slope``/``scl_inter`` rescaling.
Orientation (qform/sform) is written as a plain scaling matrix and
ignored on read.
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from pathlung.errors import FormatError, ParameterError, VolumeIOError
from pathlung.volume import LabelMask, Volume

RAW_FORMATS = {
    "int16": "<i2",
    "uint16": "<u2",
    "int32": "<i4",
    "float32": "<f4",
    "float64": "<f8",
}

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
DT_INT16 = 4
DT_FLOAT32 = 16
_NIFTI_DTYPES = {DT_INT16: ("i2", 16), DT_FLOAT32: ("f4", 32)}


def _raw_dtype(fmt):
    try:
        return np.dtype(RAW_FORMATS[fmt])
    except KeyError:
        raise ParameterError(f"unknown raw scalar format {fmt!r}; expected one of {sorted(RAW_FORMATS)}") from None


def load_raw(path, dims, spacing=(1.0, 1.0, 1.0), fmt="int16") -> Volume:
    """Read little-endian scalars in x-fastest order."""
    dtype = _raw_dtype(fmt)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ParameterError(f"dims must be three positive integers, got {dims}")
    try:
        with open(path, "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise VolumeIOError(f"cannot read raw volume {path}: {exc}") from exc
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise VolumeIOError(
            f"{path}: expected {expected} bytes for dims {dims} as {fmt}, got {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return Volume(values.reshape(dims, order="F"), spacing)


def save_raw(vol: Volume, path, fmt="int16") -> None:
    dtype = _raw_dtype(fmt)
    values = vol.flat()
    if dtype.kind in "iu":
        values = np.rint(values)
    with open(path, "wb") as fh:
        fh.write(values.astype(dtype).tobytes())


# -- NIfTI-1 -----------------------------------------------------------------


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_nifti(path):
    """Return (raw array shaped (nx, ny, nz), pixdim, slope, inter)."""
    try:
        with _open_maybe_gzip(path) as fh:
            blob = fh.read()
    except OSError as exc:
        raise VolumeIOError(f"cannot read NIfTI file {path}: {exc}") from exc
    if len(blob) < NIFTI_HEADER_SIZE:
        raise FormatError("sizeof_hdr", f"file is only {len(blob)} bytes")

    for endian in "<>":
        if struct.unpack_from(endian + "i", blob, 0)[0] == NIFTI_HEADER_SIZE:
            break
    else:
        raise FormatError("sizeof_hdr", "expected 348")

    magic = blob[344:348]
    if magic != b"n+1\x00":
        raise FormatError("magic", f"expected single-file 'n+1', got {magic!r}")

    dim = struct.unpack_from(endian + "8h", blob, 40)
    if dim[0] != 3:
        raise FormatError("dim[0]", f"only 3D volumes are supported, got {dim[0]}")
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) < 1:
        raise FormatError("dim", f"non-positive extent in {dims}")

    datatype = struct.unpack_from(endian + "h", blob, 70)[0]
    if datatype not in _NIFTI_DTYPES:
        raise FormatError("datatype", f"unsupported code {datatype}; expected 4 (int16) or 16 (float32)")

    pixdim = struct.unpack_from(endian + "8f", blob, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise FormatError("pixdim", f"voxel spacing must be positive, got {spacing}")

    vox_offset = int(struct.unpack_from(endian + "f", blob, 108)[0])
    slope, inter = struct.unpack_from(endian + "2f", blob, 112)

    code, _ = _NIFTI_DTYPES[datatype]
    dtype = np.dtype(endian + code)
    n_bytes = int(np.prod(dims)) * dtype.itemsize
    if len(blob) < vox_offset + n_bytes:
        raise VolumeIOError(
            f"{path}: expected {n_bytes} data bytes after offset {vox_offset}, got {len(blob) - vox_offset}"
        )
    raw = np.frombuffer(blob, dtype=dtype, count=int(np.prod(dims)), offset=vox_offset)
    return raw.reshape(dims, order="F"), spacing, float(slope), float(inter)


def _write_nifti(path, values, spacing, datatype, description=b""):
    code, bitpix = _NIFTI_DTYPES[datatype]
    dims = values.shape
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(NIFTI_VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    hdr[148 : 148 + min(len(description), 79)] = description[:79]
    struct.pack_into("<hh", hdr, 252, 0, 1)  # qform_code, sform_code
    struct.pack_into("<4f", hdr, 280, spacing[0], 0.0, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 296, 0.0, spacing[1], 0.0, 0.0)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, spacing[2], 0.0)
    hdr[344:348] = b"n+1\x00"
    payload = bytes(hdr) + b"\x00" * 4 + values.astype("<" + code).tobytes(order="F")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_nifti(path) -> Volume:
    raw, spacing, slope, inter = _read_nifti(path)
    values = raw.astype(np.float64)
    if slope != 0 and np.isfinite(slope):
        values = values * slope + inter
    return Volume(values, spacing)


def save_nifti(vol: Volume, path, datatype=DT_FLOAT32) -> None:
    values = vol.data if datatype == DT_FLOAT32 else np.rint(vol.data)
    _write_nifti(path, values, vol.spacing, datatype, b"pathlung volume")


def _read_labels(path):
    raw, spacing, slope, inter = _read_nifti(path)
    values = raw.astype(np.float64)
    if slope != 0 and np.isfinite(slope):
        values = values * slope + inter
    labels = np.rint(values)
    if not np.array_equal(labels, values):
        raise FormatError("datatype", "label volume holds non-integer values")
    return labels.astype(np.int32), spacing


def load_labels_nifti(path) -> np.ndarray:
    """Integer label grid, without the uint8 limit of :class:`LabelMask`."""
    return _read_labels(path)[0]


def load_mask_nifti(path) -> LabelMask:
    labels, spacing = _read_labels(path)
    return LabelMask(labels, spacing)


def save_mask_nifti(mask: LabelMask, path) -> None:
    _write_nifti(path, mask.labels, mask.spacing, DT_INT16, b"pathlung mask")


def save_labels_nifti(labels: np.ndarray, path, spacing=(1.0, 1.0, 1.0)) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < -32768 or labels.max() > 32767):
        raise InputError("label values do not fit int16")
    _write_nifti(path, labels, tuple(spacing), DT_INT16, b"pathlung labels")


def is_nifti_path(path) -> bool:
    name = os.fspath(path)
    return name.endswith(".nii") or name.endswith(".nii.gz")
