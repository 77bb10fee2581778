from .checkpoint import deserialize_layers, load_layers, save_layers, serialize_layers
from .gradcheck import finite_difference_check
from .layers import Conv3x3, Dense, Flatten, LayerParams, MaxPool2x2, ReLU
from .losses import (batch_cross_entropy, cross_entropy_backward,
                     cross_entropy_loss, softmax)
from .optim import SgdConfig, SgdOptimizer, sgd_step

__all__ = [
    "Conv3x3", "Dense", "Flatten", "LayerParams", "MaxPool2x2", "ReLU",
    "softmax", "cross_entropy_loss", "cross_entropy_backward",
    "batch_cross_entropy", "SgdConfig", "SgdOptimizer", "sgd_step",
    "finite_difference_check",
    "save_layers", "load_layers", "serialize_layers", "deserialize_layers",
]
