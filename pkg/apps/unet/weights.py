"""
Named parameter storage for the U-Net variants.
"""

from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from apps.tensors.tensor import ConvKernel3

RUNNING_SUFFIXES = (".running_mean", ".running_var")


class WeightStore:
    """Ordered, uniquely named float32 parameter arrays.

    ``tag`` is the JSON description of the architecture the parameters belong
    to; it travels with the weights file.
    """

    def __init__(self, *, tag=""):
        self.tag = tag
        self._params = {}

    def add(self, name, array) -> np.ndarray:
        if not name:
            raise ValidationError({"name": "Parameter names must be non-empty"})
        if name in self._params:
            raise ValidationError({"name": f"Duplicate parameter name {name}"})
        self._params[name] = np.ascontiguousarray(array, dtype=np.float32)
        return self._params[name]

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self._params[name]
        except KeyError:
            raise ValidationError({"name": f"Unknown parameter {name}"}) from None

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    @property
    def names(self):
        return list(self._params)

    @property
    def total_count(self) -> int:
        return int(sum(array.size for array in self._params.values()))

    @property
    def trainable_names(self):
        return [name for name in self._params if not name.endswith(RUNNING_SUFFIXES)]

    def kernel(self, name) -> ConvKernel3:
        return ConvKernel3(name=name, weight=self[f"{name}.weight"], bias=self[f"{name}.bias"])

    def batchnorm(self, name, *, momentum=0.1, epsilon=1e-5) -> "BatchNormState":
        return BatchNormState(
            name=name,
            gamma=self[f"{name}.gamma"],
            beta=self[f"{name}.beta"],
            running_mean=self[f"{name}.running_mean"],
            running_var=self[f"{name}.running_var"],
            momentum=momentum,
            epsilon=epsilon,
        )

    def copy(self) -> "WeightStore":
        clone = WeightStore(tag=self.tag)
        for name, array in self._params.items():
            clone.add(name, array.copy())
        return clone

    def bit_equal(self, other) -> bool:
        if self.tag != other.tag or self.names != other.names:
            return False
        return all(
            self[name].shape == other[name].shape and self[name].tobytes() == other[name].tobytes()
            for name in self._params
        )

    def norms(self) -> dict:
        return {name: float(np.linalg.norm(array.astype(np.float64))) for name, array in self._params.items()}


@dataclass(eq=False)
class BatchNormState:
    name: str
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError({"epsilon": "Batch-norm epsilon must be positive"})
        if not 0 <= self.momentum <= 1:
            raise ValidationError({"momentum": "Batch-norm momentum must be in [0, 1]"})
        if (self.running_var < 0).any():
            raise ValidationError({"running_var": f"{self.name} has a negative running variance"})

    @property
    def channels(self):
        return self.gamma.shape[0]

    @property
    def gamma_key(self):
        return f"{self.name}.gamma"

    @property
    def beta_key(self):
        return f"{self.name}.beta"
