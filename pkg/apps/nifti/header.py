"""
NIfTI-1 header layout and parsing.

The 348-byte header is described once as a numpy structured dtype; both byte
orders are built from the same field table.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from apps.core.exceptions import NiftiParseError

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352
SINGLE_FILE_MAGIC = b"n+1\x00"
PAIR_MAGIC = b"ni1\x00"
MAX_DIM = 32767
XYZT_UNITS_MM = 2

# datatype code -> (name, bitpix, numpy type char)
DATATYPES = {
    2: ("uint8", 8, "u1"),
    4: ("int16", 16, "i2"),
    16: ("float32", 32, "f4"),
}
DATATYPE_CODES = {name: code for code, (name, _, _) in DATATYPES.items()}

_FIELDS = (
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
)


def header_dtype(endian="<") -> np.dtype:
    fields = []
    for spec in _FIELDS:
        name, code = spec[0], spec[1]
        if code.startswith("S") or code == "u1":
            fields.append(spec)
        else:
            fields.append((name, endian + code) + spec[2:])
    return np.dtype(fields)


def field_offset(name) -> int:
    return header_dtype().fields[name][1]


def data_dtype(code, endian="<") -> np.dtype:
    _, _, char = DATATYPES[code]
    return np.dtype(char if char == "u1" else endian + char)


@dataclass(frozen=True)
class NiftiHeader:
    endianness: str
    dims: tuple
    datatype: int
    bitpix: int
    pixdim: tuple
    vox_offset: int
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    affine: np.ndarray
    magic: str
    xyzt_units: int
    descrip: str

    @property
    def datatype_name(self):
        return DATATYPES[self.datatype][0]

    @property
    def spacing(self):
        return tuple(float(abs(value)) or 1.0 for value in self.pixdim[1:4])

    @property
    def payload_bytes(self):
        return int(np.prod(self.dims)) * self.bitpix // 8

    @property
    def scaled(self):
        return self.scl_slope != 0 and (self.scl_slope, self.scl_inter) != (1.0, 0.0)

    def to_record(self):
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "datatype": self.datatype_name,
            "datatype_code": self.datatype,
            "bitpix": self.bitpix,
            "endianness": "little" if self.endianness == "<" else "big",
            "magic": self.magic,
            "vox_offset": self.vox_offset,
            "scl_slope": self.scl_slope,
            "scl_inter": self.scl_inter,
            "qform_code": self.qform_code,
            "sform_code": self.sform_code,
            "xyzt_units": self.xyzt_units,
            "payload_bytes": self.payload_bytes,
            "affine": self.affine.tolist(),
        }


def detect_endianness(raw: bytes) -> str:
    if len(raw) < 4:
        raise NiftiParseError("File too short for a NIfTI-1 header", offset=len(raw))
    if int.from_bytes(raw[:4], "little") == HEADER_SIZE:
        return "<"
    if int.from_bytes(raw[:4], "big") == HEADER_SIZE:
        return ">"
    raise NiftiParseError("sizeof_hdr is not 348 in either byte order", offset=0)


def _finite(values, name):
    values = np.asarray(values, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values.reshape(-1)))
    if bad.size:
        raise NiftiParseError(f"{name} holds a non-finite value", offset=field_offset(name) + 4 * int(bad[0]))
    return values


def _qform_affine(fields, pixdim):
    b, c, d = (float(fields[key]) for key in ("quatern_b", "quatern_c", "quatern_d"))
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rotation = Rotation.from_quat([b, c, d, a]).as_matrix()
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    scales = np.array([pixdim[1], pixdim[2], qfac * pixdim[3]])
    affine = np.eye(4)
    affine[:3, :3] = rotation * scales
    affine[:3, 3] = [float(fields[key]) for key in ("qoffset_x", "qoffset_y", "qoffset_z")]
    return affine


def parse_header(raw: bytes) -> NiftiHeader:
    """Parse and validate the header of a single-file NIfTI-1 image."""
    endian = detect_endianness(raw)
    if len(raw) < HEADER_SIZE:
        raise NiftiParseError("Truncated header", offset=len(raw))
    fields = np.frombuffer(raw, dtype=header_dtype(endian), count=1)[0]

    magic = bytes(raw[344:348])
    if magic == PAIR_MAGIC:
        raise NiftiParseError("Two-file (.hdr/.img) NIfTI is not supported", offset=344)
    if magic != SINGLE_FILE_MAGIC:
        raise NiftiParseError(f"Bad magic {magic!r}", offset=344)

    dim = [int(value) for value in fields["dim"]]
    if not 1 <= dim[0] <= 7:
        raise NiftiParseError(f"dim[0] must be in [1, 7], got {dim[0]}", offset=40)
    for index in range(1, dim[0] + 1):
        if dim[index] < 1:
            raise NiftiParseError(f"dim[{index}] must be positive, got {dim[index]}", offset=40 + 2 * index)
    for index in range(4, dim[0] + 1):
        if dim[index] != 1:
            raise NiftiParseError("Only 3D volumes are supported", offset=40 + 2 * index)
    dims = tuple(dim[index] if index <= dim[0] else 1 for index in (1, 2, 3))

    code = int(fields["datatype"])
    if code not in DATATYPES:
        raise NiftiParseError(f"Unsupported datatype code {code}", offset=70)
    bitpix = int(fields["bitpix"])
    if bitpix != DATATYPES[code][1]:
        raise NiftiParseError(f"bitpix {bitpix} does not match datatype {DATATYPES[code][0]}", offset=72)

    pixdim = _finite(fields["pixdim"], "pixdim")
    vox_offset = float(_finite(fields["vox_offset"], "vox_offset"))
    if vox_offset < SINGLE_FILE_OFFSET or vox_offset != int(vox_offset):
        raise NiftiParseError(f"vox_offset {vox_offset} is invalid for a single-file image", offset=108)
    # Slope 0 or NaN means "unscaled".
    slope = float(fields["scl_slope"])
    inter = float(fields["scl_inter"])
    if not np.isfinite(slope) or slope == 0:
        slope, inter = 0.0, 0.0
    elif not np.isfinite(inter):
        inter = 0.0

    qform_code = int(fields["qform_code"])
    sform_code = int(fields["sform_code"])
    if sform_code > 0:
        affine = np.eye(4)
        for row, name in enumerate(("srow_x", "srow_y", "srow_z")):
            affine[row] = _finite(fields[name], name)
    elif qform_code > 0:
        _finite([fields[key] for key in ("quatern_b", "quatern_c", "quatern_d")], "quatern_b")
        affine = _qform_affine(fields, pixdim)
    else:
        affine = np.diag([abs(pixdim[1]) or 1.0, abs(pixdim[2]) or 1.0, abs(pixdim[3]) or 1.0, 1.0])

    return NiftiHeader(
        endianness=endian,
        dims=dims,
        datatype=code,
        bitpix=bitpix,
        pixdim=tuple(float(value) for value in pixdim),
        vox_offset=int(vox_offset),
        scl_slope=slope,
        scl_inter=inter,
        qform_code=qform_code,
        sform_code=sform_code,
        affine=affine,
        magic=magic.rstrip(b"\x00").decode("ascii"),
        xyzt_units=int(fields["xyzt_units"]),
        descrip=bytes(fields["descrip"]).decode("latin-1"),
    )


def build_header(*, dims, spacing, affine, datatype_code) -> bytes:
    """Little-endian single-file header for a 3D image."""
    fields = np.zeros((), dtype=header_dtype("<"))
    fields["sizeof_hdr"] = HEADER_SIZE
    fields["regular"] = b"r"
    fields["dim"] = [3, *dims, 1, 1, 1, 1]
    fields["datatype"] = datatype_code
    fields["bitpix"] = DATATYPES[datatype_code][1]
    fields["pixdim"] = [1.0, *spacing, 0.0, 0.0, 0.0, 0.0]
    fields["vox_offset"] = SINGLE_FILE_OFFSET
    fields["scl_slope"] = 1.0
    fields["scl_inter"] = 0.0
    fields["xyzt_units"] = XYZT_UNITS_MM
    fields["descrip"] = b"deepdeface"
    fields["sform_code"] = 1
    fields["srow_x"] = affine[0]
    fields["srow_y"] = affine[1]
    fields["srow_z"] = affine[2]
    fields["magic"] = SINGLE_FILE_MAGIC
    return fields.tobytes()
