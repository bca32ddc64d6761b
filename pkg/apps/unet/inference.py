"""
Inference on grid-aligned volumes.
"""

import numpy as np

from apps.tensors.tensor import Tensor5
from apps.unet.config import ModelConfig
from apps.unet.services import forward
from apps.unet.weights import WeightStore
from apps.volumes.services import threshold_mask
from apps.volumes.volume import MaskVolume, Volume

# Softmax heads put the keep class at the index equal to its mask value.
KEEP_CHANNEL = 1


def predict_probabilities(store: WeightStore, config: ModelConfig, volume: Volume) -> Volume:
    """Per-voxel keep-probability on the volume's own grid.

    The volume's dims must already be multiples of ``config.grid_multiple``.
    Read-only on ``store``, so concurrent calls may share one store.
    """
    output = forward(store, config, Tensor5.from_volume(volume.data), mode="infer")
    channel = 0 if config.output_channels == 1 else KEEP_CHANNEL
    keep = np.clip(output.data[0, channel], 0.0, 1.0).astype(np.float32)
    return volume.with_data(keep, datatype="float32")


def predict_mask(store: WeightStore, config: ModelConfig, volume: Volume, *, tau=None) -> MaskVolume:
    probabilities = predict_probabilities(store, config, volume)
    if config.output_channels == 2:
        # argmax over two classes
        return threshold_mask(probabilities, 0.5)
    return threshold_mask(probabilities, tau)

