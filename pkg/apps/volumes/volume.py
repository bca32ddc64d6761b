"""
Volume types: scalar images, binary masks, augmentation parameters and the
recipe that maps a volume onto the network grid and back.
"""

from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from apps.core.exceptions import DimensionError

DIM_AXES = ("depth", "height", "width")

# Direction each world axis points toward (RAS+).
_AXIS_CODES = (("L", "R"), ("P", "A"), ("I", "S"))

DATATYPES = ("uint8", "int16", "float32")


def _default_affine(spacing):
    affine = np.eye(4)
    affine[[0, 1, 2], [0, 1, 2]] = spacing
    return affine


@dataclass(eq=False)
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None
    # On-disk datatype the volume was read from; writers reuse it by default.
    datatype: str | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DimensionError(f"A volume is 3D, got {data.ndim} axes", axis="rank")
        for axis, extent in zip(DIM_AXES, data.shape):
            if extent < 1:
                raise DimensionError(f"{axis} extent must be at least 1", axis=axis)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValidationError({"spacing": f"Spacing must be three positive values, got {self.spacing}"})
        if self.datatype is not None and self.datatype not in DATATYPES:
            raise ValidationError({"datatype": f"Unsupported datatype {self.datatype}"})
        self.data = self._coerce(data)
        self.spacing = spacing
        self.affine = _default_affine(spacing) if self.affine is None else np.array(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValidationError({"affine": "Affine must be 4x4"})

    def _coerce(self, data):
        return data

    @property
    def dims(self):
        return tuple(int(extent) for extent in self.data.shape)

    @property
    def orientation(self):
        """Axis codes of the voxel axes, e.g. ('R', 'A', 'S') for an identity affine."""
        codes = []
        rotation = self.affine[:3, :3]
        for column in range(3):
            world = int(np.argmax(np.abs(rotation[:, column])))
            codes.append(_AXIS_CODES[world][int(rotation[world, column] > 0)])
        return tuple(codes)

    def with_data(self, data, *, spacing=None, affine=None, datatype=None):
        """A volume sharing this one's geometry (unless overridden) with new voxels."""
        return Volume(
            data=data,
            spacing=self.spacing if spacing is None else spacing,
            affine=self.affine if affine is None else affine,
            datatype=datatype,
        )


class MaskVolume(Volume):
    """Binary volume: 0 marks voxels to deface, 1 voxels to keep."""

    def __init__(self, data, spacing=(1.0, 1.0, 1.0), affine=None, datatype="uint8"):
        super().__init__(data=data, spacing=spacing, affine=affine, datatype=datatype)

    def _coerce(self, data):
        if data.dtype == np.bool_:
            return data.astype(np.uint8)
        if not np.isin(data, (0, 1)).all():
            raise ValidationError({"mask": "Mask values must be exactly 0 or 1"})
        return data.astype(np.uint8)

    @classmethod
    def like(cls, volume: Volume, data):
        return cls(data, spacing=volume.spacing, affine=volume.affine)

    def defaced_fraction(self) -> float:
        return float((self.data == 0).mean())


@dataclass(frozen=True)
class RigidAugmentation:
    rotation_deg: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0
    seed: int | None = None

    @classmethod
    def sample(cls, seed, *, rotation_range=10.0, scale_range=(0.9, 1.1)):
        rng = np.random.default_rng(seed)
        rotation = tuple(float(angle) for angle in rng.uniform(-rotation_range, rotation_range, size=3))
        scale = float(rng.uniform(*scale_range))
        return cls(rotation_deg=rotation, scale=scale, seed=seed)

    @property
    def is_identity(self):
        return self.scale == 1.0 and not any(self.rotation_deg)

    def to_record(self):
        return {"rotation_deg": list(self.rotation_deg), "scale": self.scale, "seed": self.seed}


@dataclass(frozen=True)
class GridRecipe:
    """How a volume was mapped onto the network grid; inverted by ``restore``."""

    original_dims: tuple
    grid_dims: tuple
    original_spacing: tuple
    original_affine: np.ndarray = field(repr=False, compare=False)
    shrink: float = 0.5

    @property
    def is_identity(self):
        return tuple(self.original_dims) == tuple(self.grid_dims)
