from .layers import BinaryConv2d, BinaryLinear, Conv2d, LayerNorm, Linear, Module, resize_bilinear, timestep_embedding
from .nets import ModelConfig, Refiner, Segmentor, build_reference_models
from .xformer import CrossTransformerBlock, XFormer

__all__ = [
    "BinaryConv2d",
    "BinaryLinear",
    "Conv2d",
    "CrossTransformerBlock",
    "LayerNorm",
    "Linear",
    "ModelConfig",
    "Module",
    "Refiner",
    "Segmentor",
    "XFormer",
    "build_reference_models",
    "resize_bilinear",
    "timestep_embedding",
]
