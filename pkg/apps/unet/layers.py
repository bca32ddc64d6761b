"""
Batch normalization over (N, D, H, W) per channel.
"""

import numpy as np

from apps.core.exceptions import DimensionError, UsageError
from apps.tensors.tensor import Tensor5
from apps.unet.weights import BatchNormState

MODES = ("train", "infer")


def batchnorm3d(input: Tensor5, state: BatchNormState, *, mode="infer", tape=None) -> Tensor5:
    """Normalize each channel; train mode uses batch statistics and updates the running ones in place."""
    if mode not in MODES:
        raise UsageError(f"Unknown mode {mode!r}", field="mode")
    if input.shape[0] == 0:
        raise UsageError("Batch normalization needs a non-empty batch", field="batch")
    if input.channels != state.channels:
        raise DimensionError(
            f"Input has {input.channels} channels, {state.name} normalizes {state.channels}", axis="channels"
        )

    x = input.data.astype(np.float64)
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // input.channels
        unbiased = var * count / (count - 1) if count > 1 else var
        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    else:
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)

    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    normalized = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    gamma = state.gamma.astype(np.float64)
    beta = state.beta.astype(np.float64)
    output = Tensor5((normalized * gamma.reshape(shape) + beta.reshape(shape)).astype(input.dtype))
    if tape is not None:
        tape.record(
            "batchnorm3d",
            (input,),
            output,
            _batchnorm_backward,
            state=state,
            mode=mode,
            normalized=normalized,
            inv_std=inv_std,
            gamma=gamma,
        )
    return output


def _batchnorm_backward(entry, upstream):
    saved = entry.saved
    g = np.asarray(upstream, dtype=np.float64)
    axes = (0, 2, 3, 4)
    shape = (1, -1, 1, 1, 1)
    normalized = saved["normalized"]
    scale = (saved["gamma"] * saved["inv_std"]).reshape(shape)
    grad_gamma = (g * normalized).sum(axis=axes)
    grad_beta = g.sum(axis=axes)
    if saved["mode"] == "train":
        count = g.size // g.shape[1]
        input_grad = scale / count * (
            count * g - grad_beta.reshape(shape) - normalized * grad_gamma.reshape(shape)
        )
    else:
        input_grad = g * scale
    state = saved["state"]
    return (input_grad,), {state.gamma_key: grad_gamma, state.beta_key: grad_beta}
