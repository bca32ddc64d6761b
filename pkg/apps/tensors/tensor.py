"""
Dense rank-5 tensors (N, C, D, H, W) and convolution kernels.
"""

from dataclasses import dataclass, field

import numpy as np

from apps.core.exceptions import DimensionError

AXES = ("batch", "channels", "depth", "height", "width")

# float32 is the storage canon; float64 is accepted so gradient checks can
# run the same ops at check precision.
SUPPORTED_DTYPES = (np.float32, np.float64)


@dataclass(eq=False)
class Tensor5:
    data: np.ndarray
    grad: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 5:
            raise DimensionError(f"Expected a rank-5 array, got rank {data.ndim}", axis="rank")
        if data.dtype.type not in SUPPORTED_DTYPES:
            data = data.astype(np.float32)
        self.data = np.ascontiguousarray(data)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise DimensionError("Gradient shape differs from data shape", axis="grad")

    @classmethod
    def zeros(cls, shape, dtype=np.float32):
        return cls(np.zeros(shape, dtype=dtype))

    @classmethod
    def from_volume(cls, array, dtype=np.float32):
        """Wrap a 3D array as a (1, 1, D, H, W) tensor."""
        array = np.asarray(array, dtype=dtype)
        return cls(array[np.newaxis, np.newaxis])

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def spatial(self):
        return self.data.shape[2:]

    @property
    def channels(self):
        return self.data.shape[1]

    def numel(self) -> int:
        return int(self.data.size)

    def accumulate_grad(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"Gradient shape {grad.shape} does not match tensor shape {self.data.shape}",
                axis="grad",
            )
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad


@dataclass(eq=False)
class ConvKernel3:
    """A named convolution kernel (out, in, k, k, k) plus per-output bias.

    ``weight`` and ``bias`` are views into the owning weight store; gradient
    buffers are kept on the tape under ``<name>.weight`` / ``<name>.bias``.
    """

    name: str
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 5:
            raise DimensionError("Kernel weight must be rank 5", axis="kernel")
        out_channels, _, kd, kh, kw = self.weight.shape
        if not kd == kh == kw:
            raise DimensionError(f"Kernel {self.name} is not cubic: {self.weight.shape[2:]}", axis="kernel")
        if self.bias.shape != (out_channels,):
            raise DimensionError(f"Bias of {self.name} must have {out_channels} entries", axis="bias")

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def size(self):
        return self.weight.shape[2]

    @property
    def weight_key(self):
        return f"{self.name}.weight"

    @property
    def bias_key(self):
        return f"{self.name}.bias"
