from .adam import AdamState, adam_step
from .model import (FULL_CHANNELS, FULL_DILATIONS, WIDE_DILATIONS, LayerSpec, ModelParams,
                    backward, forward, forward_sparse, init_model, layer_table)

__all__ = [
    "AdamState", "adam_step", "FULL_CHANNELS", "FULL_DILATIONS", "WIDE_DILATIONS", "LayerSpec",
    "ModelParams", "backward", "forward", "forward_sparse", "init_model", "layer_table",
]
