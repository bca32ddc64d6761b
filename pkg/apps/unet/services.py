"""
U-Net construction, forward pass and parameter accounting.

Layer names: ``enc{i}.conv1``, ``enc{i}.conv2``, ``enc{i}.bn`` (batch-norm
variants, after the pool), ``bottleneck.conv{j}``, ``dec{i}.conv`` and
``head``. Decoder convolutions see the upsampled features first and the skip
features second.
"""

import logging
from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import DimensionError, UsageError
from apps.metrics.services import PUBLISHED_REFERENCE
from apps.tensors import ops
from apps.tensors.tensor import Tensor5
from apps.unet.config import ModelConfig
from apps.unet.layers import MODES, batchnorm3d
from apps.unet.weights import WeightStore

logger = logging.getLogger(__name__)

PUBLISHED_PARAMETER_COUNTS = {variant: reference["parameters"] for variant, reference in PUBLISHED_REFERENCE.items()}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_channels: int
    out_channels: int
    size: int = 3

    @property
    def parameter_shapes(self):
        if self.kind == "conv":
            k = self.size
            return {
                f"{self.name}.weight": (self.out_channels, self.in_channels, k, k, k),
                f"{self.name}.bias": (self.out_channels,),
            }
        return {
            f"{self.name}.{suffix}": (self.out_channels,)
            for suffix in ("gamma", "beta", "running_mean", "running_var")
        }

    @property
    def parameter_count(self):
        return int(sum(np.prod(shape) for shape in self.parameter_shapes.values()))


def layer_plan(config: ModelConfig) -> list:
    config.validate()
    filters = config.encoder_filters
    plan = []
    channels = config.input_channels
    for level, width in enumerate(filters):
        plan.append(LayerSpec(f"enc{level}.conv1", "conv", channels, width))
        plan.append(LayerSpec(f"enc{level}.conv2", "conv", width, width))
        if config.use_batchnorm:
            plan.append(LayerSpec(f"enc{level}.bn", "bn", width, width))
        channels = width
    for index in range(1, config.bottleneck_convs + 1):
        plan.append(LayerSpec(f"bottleneck.conv{index}", "conv", channels, config.bottleneck_filters))
        channels = config.bottleneck_filters
    for level in reversed(range(config.levels)):
        plan.append(LayerSpec(f"dec{level}.conv", "conv", channels + filters[level], filters[level]))
        channels = filters[level]
    plan.append(LayerSpec("head", "conv", channels, config.output_channels, size=1))
    return plan


def build_model(config: ModelConfig, *, seed=0) -> WeightStore:
    """He-initialized weights: N(0, 2 / fan_in) kernels, zero biases, identity batch norm."""
    store = WeightStore(tag=config.to_tag())
    rng = np.random.default_rng(seed)
    for layer in layer_plan(config):
        if layer.kind == "conv":
            fan_in = layer.in_channels * layer.size ** 3
            shapes = layer.parameter_shapes
            weight_shape = shapes[f"{layer.name}.weight"]
            store.add(f"{layer.name}.weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), size=weight_shape))
            store.add(f"{layer.name}.bias", np.zeros(layer.out_channels))
        else:
            store.add(f"{layer.name}.gamma", np.ones(layer.out_channels))
            store.add(f"{layer.name}.beta", np.zeros(layer.out_channels))
            store.add(f"{layer.name}.running_mean", np.zeros(layer.out_channels))
            store.add(f"{layer.name}.running_var", np.ones(layer.out_channels))
    logger.debug("built %s model with %d parameters (seed %s)", config.variant, store.total_count, seed)
    return store


def count_parameters(store: WeightStore) -> int:
    return store.total_count


def _level(name, levels):
    stage = name.split(".", 1)[0]
    if stage.startswith(("enc", "dec")):
        return int(stage[3:])
    return levels if stage == "bottleneck" else 0


def multiply_adds(config: ModelConfig, grid_dims) -> int:
    """Convolution multiply-adds for one forward pass on a ``grid_dims`` input.

    Level ``l`` runs at ``grid_dims / 2**l``; the bottleneck sits below the
    last pool. Batch norm, pooling and activations are not counted.
    """
    dims = tuple(int(extent) for extent in grid_dims)
    multiple = config.grid_multiple
    if len(dims) != 3 or any(extent < multiple or extent % multiple for extent in dims):
        raise DimensionError(f"Grid {dims} is not made of positive multiples of {multiple}", axis="grid")
    total = 0
    for layer in layer_plan(config):
        if layer.kind != "conv":
            continue
        scale = 2 ** _level(layer.name, config.levels)
        voxels = int(np.prod([extent // scale for extent in dims]))
        total += voxels * layer.out_channels * layer.in_channels * layer.size ** 3
    return total


def check_input(config: ModelConfig, input: Tensor5):
    if input.channels != config.input_channels:
        raise DimensionError(
            f"Model expects {config.input_channels} input channel(s), got {input.channels}", axis="channels"
        )
    multiple = config.grid_multiple
    for axis, extent in zip(("depth", "height", "width"), input.spatial):
        if extent % multiple:
            raise DimensionError(
                f"{axis} extent {extent} is not divisible by {multiple}; resample the volume with fit_to_grid first",
                axis=axis,
            )


def forward(store: WeightStore, config: ModelConfig, input: Tensor5, *, mode="infer", tape=None) -> Tensor5:
    """Run the network; returns keep-probabilities (sigmoid head) or a 2-class distribution (softmax head)."""
    if mode not in MODES:
        raise UsageError(f"Unknown mode {mode!r}", field="mode")
    check_input(config, input)

    h = input
    skips = []
    for level in range(config.levels):
        h = ops.relu(ops.conv3d(h, store.kernel(f"enc{level}.conv1"), tape=tape), tape=tape)
        h = ops.relu(ops.conv3d(h, store.kernel(f"enc{level}.conv2"), tape=tape), tape=tape)
        skips.append(h)
        h, _ = ops.maxpool3d(h, tape=tape)
        if config.use_batchnorm:
            h = batchnorm3d(h, store.batchnorm(f"enc{level}.bn"), mode=mode, tape=tape)

    for index in range(1, config.bottleneck_convs + 1):
        h = ops.relu(ops.conv3d(h, store.kernel(f"bottleneck.conv{index}"), tape=tape), tape=tape)

    for level in reversed(range(config.levels)):
        h = ops.upsample_nearest3d(h, tape=tape)
        h = ops.concat_channels(h, skips[level], tape=tape)
        h = ops.relu(ops.conv3d(h, store.kernel(f"dec{level}.conv"), tape=tape), tape=tape)

    logits = ops.conv3d(h, store.kernel("head"), tape=tape)
    if config.head == "sigmoid_1ch":
        return ops.sigmoid(logits, tape=tape)
    return ops.softmax_channels(logits, tape=tape)


def model_summary(store: WeightStore, config: ModelConfig) -> str:
    """Per-layer parameter table with the total and the published reference count."""
    lines = [f"model: {config.variant}  filters: {list(config.encoder_filters)} -> {config.bottleneck_filters}"]
    lines.append(f"{'layer':<20}{'shape':<28}{'parameters':>12}")
    for layer in layer_plan(config):
        for name, shape in layer.parameter_shapes.items():
            count = store[name].size
            lines.append(f"{name:<20}{'x'.join(str(s) for s in shape):<28}{count:>12,}")
    total = count_parameters(store)
    lines.append(f"{'total':<48}{total:>12,}")
    reference = PUBLISHED_PARAMETER_COUNTS.get(config.variant)
    if reference is not None:
        delta = total - reference
        lines.append(f"{'published':<48}{reference:>12,}")
        lines.append(f"{'delta':<48}{delta:>+12,}")
    return "\n".join(lines)
