from .layers import (BilinearUpsample, Conv2d, LeakyReLU, Module, ReLU, Sequential,
                     sigmoid, softmax, softmax_backward)
from .networks import Decoder, Discriminator, Generator, ModelConfig
from .checkpoint import CHECKPOINT_VERSION, config_hash, load_checkpoint, save_checkpoint

__all__ = [
    "BilinearUpsample", "Conv2d", "LeakyReLU", "Module", "ReLU", "Sequential",
    "sigmoid", "softmax", "softmax_backward",
    "Decoder", "Discriminator", "Generator", "ModelConfig",
    "CHECKPOINT_VERSION", "config_hash", "load_checkpoint", "save_checkpoint",
]
