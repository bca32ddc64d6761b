"""
Differentiable 3D ops for the U-Net: convolution, pooling, upsampling,
channel concatenation and activations.

Every op is a pure function of its inputs. Passing a ``tape`` records the op
so ``Tape.backward`` can compute exact gradients. Arithmetic runs in float64
and results are stored back in the input dtype.
"""

import itertools
import logging

import numpy as np
from django.conf import settings
from scipy import special

from apps.core.exceptions import DimensionError, UsageError
from apps.core.parallel import current_threads, ordered_map
from apps.tensors.tensor import AXES, ConvKernel3, Tensor5

logger = logging.getLogger(__name__)

PADDINGS = ("same", "valid")


def _channel_blocks(count):
    block = settings.DEFACE["CONV_CHANNEL_BLOCK"]
    return [(lo, min(lo + block, count)) for lo in range(0, count, block)]


def _offsets(size):
    return itertools.product(range(size), repeat=3)


def _pad_width(kernel: ConvKernel3, padding):
    if padding == "same":
        return kernel.size // 2
    return 0


def _check_conv(input: Tensor5, kernel: ConvKernel3, padding, stride):
    if padding not in PADDINGS:
        raise UsageError(f"Unknown padding {padding!r}", field="padding")
    if stride != 1:
        raise UsageError("Convolutions run at stride 1; downsampling is done by pooling", field="stride")
    if input.channels != kernel.in_channels:
        raise DimensionError(
            f"Input has {input.channels} channels but kernel {kernel.name} expects {kernel.in_channels}",
            axis="channels",
        )
    if padding == "valid":
        for axis, extent in zip(AXES[2:], input.spatial):
            if extent < kernel.size:
                raise DimensionError(
                    f"{axis} extent {extent} is smaller than kernel size {kernel.size}",
                    axis=axis,
                )


def _conv_forward(padded, weight, bias, out_dims):
    depth, height, width = out_dims
    size = weight.shape[2]
    batch = padded.shape[0]

    def block(bounds):
        lo, hi = bounds
        acc = np.zeros((batch, hi - lo, depth, height, width), dtype=np.float64)
        for a, b, c in _offsets(size):
            window = padded[:, :, a:a + depth, b:b + height, c:c + width]
            acc += np.moveaxis(np.tensordot(weight[lo:hi, :, a, b, c], window, axes=([1], [1])), 0, 1)
        acc += bias[lo:hi].reshape(1, -1, 1, 1, 1)
        return acc

    parts = ordered_map(block, _channel_blocks(weight.shape[0]), threads=current_threads())
    return np.concatenate(parts, axis=1)


def conv3d(input: Tensor5, kernel: ConvKernel3, *, padding="same", stride=1, tape=None) -> Tensor5:
    """Cross-correlate ``input`` with ``kernel`` and add the bias."""
    _check_conv(input, kernel, padding, stride)
    pad = _pad_width(kernel, padding)
    x = input.data.astype(np.float64)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    out_dims = tuple(extent + 2 * pad - kernel.size + 1 for extent in input.spatial)
    weight = kernel.weight.astype(np.float64)
    bias = kernel.bias.astype(np.float64)
    result = _conv_forward(x, weight, bias, out_dims)
    output = Tensor5(result.astype(input.dtype))
    if tape is not None:
        tape.record(
            "conv3d",
            (input,),
            output,
            _conv3d_entry_backward,
            kernel=kernel,
            padding=padding,
            padded=x,
            weight=weight,
        )
    return output


def conv3d_backward(entry, upstream):
    """Gradients of a recorded ``conv3d`` call: (input_grad, weight_grad, bias_grad)."""
    if entry is None or entry.op != "conv3d":
        raise UsageError("conv3d_backward needs the tape entry of a conv3d call", field="tape")
    kernel = entry.saved["kernel"]
    padded = entry.saved["padded"]
    weight = entry.saved["weight"]
    input = entry.inputs[0]
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != entry.output.shape:
        raise DimensionError(
            f"Upstream gradient shape {g.shape} differs from recorded output {entry.output.shape}",
            axis="grad",
        )
    size = kernel.size
    depth, height, width = g.shape[2:]

    def weight_block(bounds):
        lo, hi = bounds
        grad = np.zeros((hi - lo,) + weight.shape[1:], dtype=np.float64)
        for a, b, c in _offsets(size):
            window = padded[:, :, a:a + depth, b:b + height, c:c + width]
            grad[:, :, a, b, c] = np.tensordot(g[:, lo:hi], window, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        return grad

    def input_block(bounds):
        lo, hi = bounds
        grad = np.zeros((padded.shape[0], hi - lo) + padded.shape[2:], dtype=np.float64)
        for a, b, c in _offsets(size):
            contribution = np.tensordot(weight[:, lo:hi, a, b, c], g, axes=([0], [1]))
            grad[:, :, a:a + depth, b:b + height, c:c + width] += np.moveaxis(contribution, 0, 1)
        return grad

    threads = current_threads()
    weight_grad = np.concatenate(ordered_map(weight_block, _channel_blocks(weight.shape[0]), threads=threads), axis=0)
    padded_grad = np.concatenate(ordered_map(input_block, _channel_blocks(weight.shape[1]), threads=threads), axis=1)
    pad = _pad_width(kernel, entry.saved["padding"])
    d, h, w = input.spatial
    input_grad = padded_grad[:, :, pad:pad + d, pad:pad + h, pad:pad + w]
    bias_grad = g.sum(axis=(0, 2, 3, 4))
    return input_grad, weight_grad, bias_grad


def _conv3d_entry_backward(entry, upstream):
    input_grad, weight_grad, bias_grad = conv3d_backward(entry, upstream)
    kernel = entry.saved["kernel"]
    return (input_grad,), {kernel.weight_key: weight_grad, kernel.bias_key: bias_grad}


def maxpool3d(input: Tensor5, *, window=2, stride=2, tape=None):
    """2x2x2 max pooling at stride 2. Returns (output, argmax indices).

    Argmax indices are positions 0..7 inside each block (row-major over the
    block's depth, height, width); ties resolve to the first position.
    """
    if window != 2 or stride != 2:
        raise UsageError("Only window 2 at stride 2 is supported", field="window")
    n, c, d, h, w = input.shape
    for axis, extent in zip(AXES[2:], (d, h, w)):
        if extent % 2:
            raise DimensionError(
                f"{axis} extent {extent} is odd; resample the volume to even dimensions first",
                axis=axis,
            )
    blocks = (
        input.data.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, d // 2, h // 2, w // 2, 8)
    )
    argmax = blocks.argmax(axis=-1)
    pooled = np.take_along_axis(blocks, argmax[..., np.newaxis], axis=-1)[..., 0]
    output = Tensor5(pooled)
    if tape is not None:
        tape.record("maxpool3d", (input,), output, _maxpool3d_backward, argmax=argmax)
    return output, argmax


def maxpool3d_backward(argmax, upstream, input_shape):
    n, c, d, h, w = input_shape
    g = np.asarray(upstream)
    routed = np.zeros(g.shape + (8,), dtype=g.dtype)
    np.put_along_axis(routed, argmax[..., np.newaxis], g[..., np.newaxis], axis=-1)
    return (
        routed.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2)
        .transpose(0, 1, 2, 5, 3, 6, 4, 7)
        .reshape(n, c, d, h, w)
    )


def _maxpool3d_backward(entry, upstream):
    return (maxpool3d_backward(entry.saved["argmax"], upstream, entry.inputs[0].shape),), {}


def upsample_nearest3d(input: Tensor5, *, factor=2, tape=None) -> Tensor5:
    if factor != 2:
        raise UsageError("Only factor 2 upsampling is supported", field="factor")
    data = input.data.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4)
    output = Tensor5(data)
    if tape is not None:
        tape.record("upsample_nearest3d", (input,), output, _upsample_backward)
    return output


def upsample_nearest3d_backward(upstream):
    n, c, d, h, w = upstream.shape
    return upstream.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2).sum(axis=(3, 5, 7))


def _upsample_backward(entry, upstream):
    return (upsample_nearest3d_backward(upstream),), {}


def concat_channels(a: Tensor5, b: Tensor5, *, tape=None) -> Tensor5:
    """Concatenate along channels, ``a``'s channels first."""
    for index, axis in enumerate(AXES):
        if index == 1:
            continue
        if a.shape[index] != b.shape[index]:
            raise DimensionError(
                f"Cannot concatenate: {axis} is {a.shape[index]} vs {b.shape[index]}",
                axis=axis,
            )
    dtype = np.result_type(a.dtype, b.dtype)
    output = Tensor5(np.concatenate([a.data.astype(dtype), b.data.astype(dtype)], axis=1))
    if tape is not None:
        tape.record("concat_channels", (a, b), output, _concat_backward, split=a.channels)
    return output


def _concat_backward(entry, upstream):
    split = entry.saved["split"]
    return (upstream[:, :split], upstream[:, split:]), {}


def relu(input: Tensor5, *, tape=None) -> Tensor5:
    output = Tensor5(np.maximum(input.data, 0).astype(input.dtype))
    if tape is not None:
        tape.record("relu", (input,), output, _relu_backward)
    return output


def _relu_backward(entry, upstream):
    # Subgradient at exactly zero is 0.
    return (upstream * (entry.inputs[0].data > 0),), {}


def sigmoid(input: Tensor5, *, tape=None) -> Tensor5:
    output = Tensor5(special.expit(input.data.astype(np.float64)).astype(input.dtype))
    if tape is not None:
        tape.record("sigmoid", (input,), output, _sigmoid_backward)
    return output


def _sigmoid_backward(entry, upstream):
    s = special.expit(entry.inputs[0].data.astype(np.float64))
    return (upstream * s * (1.0 - s),), {}


def softmax_channels(input: Tensor5, *, tape=None) -> Tensor5:
    """Per-voxel softmax over the channel axis."""
    output = Tensor5(special.softmax(input.data.astype(np.float64), axis=1).astype(input.dtype))
    if tape is not None:
        tape.record("softmax_channels", (input,), output, _softmax_backward)
    return output


def _softmax_backward(entry, upstream):
    s = special.softmax(entry.inputs[0].data.astype(np.float64), axis=1)
    g = np.asarray(upstream, dtype=np.float64)
    return (s * (g - (g * s).sum(axis=1, keepdims=True)),), {}
