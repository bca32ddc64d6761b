"""
Reading and writing single-file NIfTI-1 volumes and masks.
"""

import logging
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from apps.core.exceptions import DimensionError, NiftiParseError
from apps.core.storage import write_atomic
from apps.nifti.header import (
    DATATYPE_CODES,
    DATATYPES,
    MAX_DIM,
    NiftiHeader,
    build_header,
    data_dtype,
    parse_header,
)
from apps.volumes.volume import DIM_AXES, MaskVolume, Volume

logger = logging.getLogger(__name__)

# Four zero bytes: "no extensions follow".
_NO_EXTENSIONS = b"\x00\x00\x00\x00"


def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def inspect_header(path) -> NiftiHeader:
    return parse_header(_read_bytes(path))


def _decode(raw: bytes):
    header = parse_header(raw)
    end = header.vox_offset + header.payload_bytes
    if end > len(raw):
        raise NiftiParseError(
            f"Truncated voxel data: need {header.payload_bytes} bytes from {header.vox_offset}",
            offset=len(raw),
        )
    count = int(np.prod(header.dims))
    flat = np.frombuffer(raw, dtype=data_dtype(header.datatype, header.endianness), count=count, offset=header.vox_offset)
    data = flat.reshape(header.dims, order="F")
    return header, data.astype(data.dtype.newbyteorder("="))


def read_nifti(path) -> Volume:
    header, data = _decode(_read_bytes(path))
    if header.scaled:
        data = (data.astype(np.float64) * header.scl_slope + header.scl_inter).astype(np.float32)
        datatype = "float32"
    else:
        datatype = header.datatype_name
    logger.debug("read %s: dims=%s datatype=%s endianness=%s", path, header.dims, datatype, header.endianness)
    return Volume(data=data, spacing=header.spacing, affine=header.affine, datatype=datatype)


def read_mask(path) -> MaskVolume:
    volume = read_nifti(path)
    return MaskVolume(volume.data, spacing=volume.spacing, affine=volume.affine)


def _encode_data(volume: Volume, datatype: str) -> np.ndarray:
    data = volume.data
    target = data_dtype(DATATYPE_CODES[datatype])
    if target.kind in "iu":
        info = np.iinfo(target)
        if not np.all(np.isfinite(data)) or not np.array_equal(data, np.round(data)):
            raise ValidationError({"datatype": f"Voxel values are not integral; cannot store as {datatype}"})
        if data.min() < info.min or data.max() > info.max:
            raise ValidationError({"datatype": f"Voxel values fall outside the {datatype} range"})
    return data.astype(target)


def encode_nifti(volume: Volume, datatype=None) -> bytes:
    if datatype is None:
        datatype = "uint8" if isinstance(volume, MaskVolume) else (volume.datatype or "float32")
    if datatype not in DATATYPE_CODES:
        supported = ", ".join(name for name, _, _ in DATATYPES.values())
        raise ValidationError({"datatype": f"Unsupported datatype {datatype}; choose one of {supported}"})
    for axis, extent in zip(DIM_AXES, volume.dims):
        if extent > MAX_DIM:
            raise DimensionError(f"{axis} extent {extent} exceeds the NIfTI-1 limit {MAX_DIM}", axis=axis)

    header = build_header(
        dims=volume.dims,
        spacing=volume.spacing,
        affine=volume.affine,
        datatype_code=DATATYPE_CODES[datatype],
    )
    payload = _encode_data(volume, datatype).tobytes(order="F")
    return header + _NO_EXTENSIONS + payload


def write_nifti(volume: Volume, path, datatype=None) -> Path:
    """Write ``volume`` as a little-endian single-file NIfTI-1 image.

    Masks default to uint8, other volumes to their source datatype or float32.
    The file appears atomically.
    """
    written = write_atomic(path, encode_nifti(volume, datatype))
    logger.debug("wrote %s (%s)", written, volume.dims)
    return written
