"""
Adam with bias correction; no weight decay, clipping or schedule.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from apps.core.exceptions import UsageError
from apps.unet.weights import WeightStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        errors = {}
        if not self.learning_rate > 0:
            errors["learning_rate"] = "Learning rate must be positive"
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                errors[name] = f"{name} must be in [0, 1)"
        if not self.epsilon > 0:
            errors["epsilon"] = "Epsilon must be positive"
        if errors:
            raise ValidationError(errors)

    @classmethod
    def from_settings(cls, **overrides):
        defaults = settings.DEFACE
        values = {
            "learning_rate": defaults["LEARNING_RATE"],
            "beta1": defaults["BETA1"],
            "beta2": defaults["BETA2"],
            "epsilon": defaults["ADAM_EPSILON"],
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(eq=False)
class AdamState:
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(store: WeightStore, grads: dict, config: AdamConfig, state: AdamState) -> WeightStore:
    """Apply one update in place; parameters without a gradient keep their values and moments."""
    unknown = set(grads) - set(store.trainable_names)
    if unknown:
        raise UsageError(f"Gradients for unknown or untrainable parameters: {sorted(unknown)}", field="grads")
    for name, grad in grads.items():
        if np.shape(grad) != store[name].shape:
            raise UsageError(
                f"Gradient for {name} has shape {np.shape(grad)}, parameter has {store[name].shape}", field="grads"
            )

    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for name in store.trainable_names:
        if name not in grads:
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.epsilon)
        parameter = store[name]
        parameter[...] = (parameter.astype(np.float64) - update).astype(np.float32)
    return store
