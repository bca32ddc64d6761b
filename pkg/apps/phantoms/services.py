"""
Synthetic head phantoms and the geometric oracle defacer.

Geometry lives in voxel-index space. The head is an ellipsoid with semi-axes
``head_radii * dims`` along (R, A, S) = axes (0, 1, 2), rotated by ``pose_deg``
about its centre, with a small nose ellipsoid on the anterior surface. The
face region is the anterior-inferior part of the head frame,
u_A >= face_depth and u_S <= face_top, dilated and clipped to the foreground.
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from apps.core.exceptions import PhantomSpecError
from apps.volumes.volume import MaskVolume, Volume

logger = logging.getLogger(__name__)

MARGIN_VOXELS = 2
NOSE_CENTRE = np.array([0.0, 0.95, -0.15])
SHELL_START = 0.85


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (48, 48, 48)
    spacing: tuple = (1.0, 1.0, 1.0)
    head_radii: tuple = (0.30, 0.36, 0.33)
    face_depth: float = 0.35
    face_top: float = 0.35
    nose_radius: float = 0.15
    texture_amplitude: float = 0.15
    dilation: int = 2
    pose_deg: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("dims", "spacing", "head_radii", "pose_deg"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "dims", tuple(int(extent) for extent in self.dims))

    def validate(self):
        if len(self.dims) != 3 or any(extent < 8 for extent in self.dims):
            raise PhantomSpecError(f"Phantom dims must be three extents of at least 8, got {self.dims}", field="dims")
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise PhantomSpecError(f"Spacing must be positive, got {self.spacing}", field="spacing")
        if len(self.head_radii) != 3 or any(not 0 < r < 0.5 for r in self.head_radii):
            raise PhantomSpecError("Head radii are fractions of the field of view in (0, 0.5)", field="head_radii")
        if not 0 <= self.face_depth < 1:
            raise PhantomSpecError("face_depth must be in [0, 1)", field="face_depth")
        if not -1 < self.face_top <= 1:
            raise PhantomSpecError("face_top must be in (-1, 1]", field="face_top")
        if not 0 <= self.nose_radius < 0.5:
            raise PhantomSpecError("nose_radius must be in [0, 0.5)", field="nose_radius")
        if not 0 <= self.texture_amplitude <= 0.3:
            raise PhantomSpecError("texture_amplitude must be in [0, 0.3]", field="texture_amplitude")
        if self.dilation < 0:
            raise PhantomSpecError("dilation must be non-negative", field="dilation")

        geometry = PhantomGeometry.from_spec(self)
        extents = geometry.half_extents(1.0 + self.nose_radius)
        for axis, (extent, size) in enumerate(zip(extents, self.dims)):
            margin = (size - 1) / 2.0 - extent
            if margin < MARGIN_VOXELS:
                raise PhantomSpecError(
                    f"Head exceeds the field of view on axis {axis}: margin {margin:.2f} voxels, need {MARGIN_VOXELS}",
                    field="head_radii",
                )
        return self

    def to_record(self):
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "pose_deg": list(self.pose_deg),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PhantomGeometry:
    """Head frame: centre and semi-axes in voxels, rotation columns are the R, A, S directions."""

    centre: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)
    rotation: np.ndarray = field(repr=False)
    face_depth: float = 0.35
    face_top: float = 0.35
    dilation: int = 2

    @classmethod
    def from_spec(cls, spec: PhantomSpec) -> "PhantomGeometry":
        dims = np.asarray(spec.dims, dtype=np.float64)
        return cls(
            centre=(dims - 1.0) / 2.0,
            radii=np.asarray(spec.head_radii, dtype=np.float64) * dims,
            rotation=Rotation.from_euler("xyz", spec.pose_deg, degrees=True).as_matrix(),
            face_depth=spec.face_depth,
            face_top=spec.face_top,
            dilation=spec.dilation,
        )

    @classmethod
    def estimate(cls, foreground: np.ndarray, *, face_depth=0.35, face_top=0.35, dilation=2) -> "PhantomGeometry":
        """Recover the head frame from a binary foreground.

        Centroid plus principal axes; each axis is matched to the world axis
        it is closest to, which holds for poses within a few tens of degrees.
        """
        points = np.argwhere(foreground).astype(np.float64)
        if len(points) < 4:
            raise PhantomSpecError("Image has no foreground to estimate a head from", field="image")
        centre = points.mean(axis=0)
        eigenvalues, vectors = np.linalg.eigh(np.cov(points - centre, rowvar=False))

        best = max(itertools.permutations(range(3)), key=lambda p: sum(abs(vectors[k, p[k]]) for k in range(3)))
        rotation = np.empty((3, 3))
        variances = np.empty(3)
        for axis, column in enumerate(best):
            vector = vectors[:, column]
            rotation[:, axis] = vector if vector[axis] >= 0 else -vector
            variances[axis] = eigenvalues[column]
        # A solid ellipsoid has variance r^2 / 5 along each semi-axis; 1/12 is the voxel quantization term.
        radii = np.sqrt(5.0 * np.maximum(variances - 1.0 / 12.0, 1e-6))
        return cls(
            centre=centre, radii=radii, rotation=rotation, face_depth=face_depth, face_top=face_top, dilation=dilation
        )

    def half_extents(self, scale=1.0):
        """World-axis half extents of the (scaled) head ellipsoid."""
        return np.sqrt(((self.rotation * (self.radii * scale)) ** 2).sum(axis=1))

    def head_coordinates(self, dims) -> np.ndarray:
        """Normalized head-frame coordinates (3, D, H, W) of every voxel centre."""
        grid = np.indices(dims, dtype=np.float64)
        offsets = grid - self.centre.reshape(3, 1, 1, 1)
        local = np.tensordot(self.rotation.T, offsets, axes=(1, 0))
        return local / self.radii.reshape(3, 1, 1, 1)

    def face_region(self, dims, foreground: np.ndarray) -> np.ndarray:
        u = self.head_coordinates(dims)
        region = (u[1] >= self.face_depth) & (u[2] <= self.face_top)
        if self.dilation:
            structure = ndimage.generate_binary_structure(3, 1)
            region = ndimage.binary_dilation(region, structure=structure, iterations=self.dilation)
        return region & foreground


def _texture(dims, seed, amplitude):
    if amplitude == 0:
        return np.zeros(dims)
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=max(dims) / 10.0, mode="wrap")
    peak = np.abs(noise).max()
    return amplitude * noise / peak if peak > 0 else noise


def generate_phantom(spec: PhantomSpec):
    """Return ``(image, mask)``; the mask is the oracle's for the same geometry."""
    spec.validate()
    geometry = PhantomGeometry.from_spec(spec)
    u = geometry.head_coordinates(spec.dims)
    radial = np.sqrt((u ** 2).sum(axis=0))
    head = radial <= 1.0
    if spec.nose_radius > 0:
        nose_offset = (u - NOSE_CENTRE.reshape(3, 1, 1, 1)) / spec.nose_radius
        nose = (nose_offset ** 2).sum(axis=0) <= 1.0
    else:
        nose = np.zeros(spec.dims, dtype=bool)
    foreground = head | nose

    # Bright scalp shell, darker interior, bright nose; texture on top.
    base = np.where(radial > SHELL_START, 0.9, 0.55)
    base = np.where(nose & ~head, 0.8, base)
    intensities = np.clip(base + _texture(spec.dims, spec.seed, spec.texture_amplitude), 0.25, 1.0)
    data = np.where(foreground, intensities, 0.0).astype(np.float32)

    image = Volume(data, spacing=spec.spacing)
    mask = MaskVolume(~geometry.face_region(spec.dims, foreground), spacing=spec.spacing, affine=image.affine)
    logger.debug("phantom %s seed %d: defaced fraction %.4f", spec.dims, spec.seed, mask.defaced_fraction())
    return image, mask


def oracle_deface(image: Volume, spec: PhantomSpec | None = None) -> MaskVolume:
    """Ground-truth defacing mask for ``image``.

    With ``spec`` the exact generating geometry is used; otherwise the head
    frame is estimated from the intensity support.
    """
    foreground = image.data > 0
    if not foreground.any():
        raise PhantomSpecError("Image has an empty foreground", field="image")
    if spec is not None:
        if tuple(spec.dims) != image.dims:
            raise PhantomSpecError(f"Spec dims {spec.dims} do not match image dims {image.dims}", field="dims")
        geometry = PhantomGeometry.from_spec(spec)
    else:
        geometry = PhantomGeometry.estimate(foreground)
    return MaskVolume(~geometry.face_region(image.dims, foreground), spacing=image.spacing, affine=image.affine)
