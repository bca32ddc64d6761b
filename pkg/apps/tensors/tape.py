"""
Reverse-mode tape for the tensor ops.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from apps.core.exceptions import UsageError
from apps.tensors.tensor import Tensor5

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor5
    backward: Callable
    saved: dict = field(default_factory=dict)


class Tape:
    """Ordered record of executed ops.

    Each entry's ``backward(entry, upstream)`` returns ``(input_grads,
    param_grads)``: one gradient (or ``None``) per input tensor and a dict of
    named parameter gradients.
    """

    def __init__(self):
        self.entries = []
        self.param_grads = {}
        self._consumed = False

    def __len__(self):
        return len(self.entries)

    def record(self, op, inputs, output, backward, **saved) -> TapeEntry:
        if self._consumed:
            raise UsageError("Tape already ran its backward pass", field="tape")
        entry = TapeEntry(op=op, inputs=tuple(inputs), output=output, backward=backward, saved=saved)
        self.entries.append(entry)
        return entry

    def find(self, output: Tensor5) -> TapeEntry:
        for entry in reversed(self.entries):
            if entry.output is output:
                return entry
        raise UsageError("Tensor was not produced by an op on this tape", field="tape")

    def accumulate_param(self, name, grad):
        current = self.param_grads.get(name)
        if current is None:
            self.param_grads[name] = np.array(grad, dtype=np.float64, copy=True)
        else:
            current += grad

    def backward(self, output: Tensor5, upstream=None) -> dict:
        """Propagate ``upstream`` from ``output`` back through every entry.

        Returns the named parameter gradients.
        """
        if self._consumed:
            raise UsageError("Tape already ran its backward pass", field="tape")
        self.find(output)
        if upstream is None:
            upstream = np.ones_like(output.data)
        output.accumulate_grad(upstream)

        for entry in reversed(self.entries):
            if entry.output.grad is None:
                continue
            input_grads, param_grads = entry.backward(entry, entry.output.grad)
            for tensor, grad in zip(entry.inputs, input_grads):
                if grad is not None and isinstance(tensor, Tensor5):
                    tensor.accumulate_grad(grad)
            for name, grad in param_grads.items():
                self.accumulate_param(name, grad)

        self._consumed = True
        logger.debug("backward pass over %d ops produced %d parameter gradients", len(self.entries), len(self.param_grads))
        return self.param_grads
