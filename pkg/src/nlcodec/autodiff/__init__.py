"""Small reverse-mode differentiation engine over float64 numpy arrays."""
from . import ops
from .conv import (
    causal_mask,
    conv2d,
    gdn,
    left_neighbor_mask,
    masked_conv2d,
    previous_row_mask,
    same_padding,
    transposed_conv2d,
)
from .module import CONTEXT_MASKS, GDN, Conv, LeakyReLU, Module, Sequential
from .ops import leaky_relu
from .tensor import NonFiniteError, Parameter, Tensor, as_tensor, backward

__all__ = [
    "CONTEXT_MASKS", "GDN", "Conv", "LeakyReLU", "Module", "NonFiniteError", "Parameter",
    "Sequential", "Tensor", "as_tensor", "backward", "causal_mask", "conv2d", "gdn",
    "leaky_relu", "left_neighbor_mask", "masked_conv2d", "ops", "previous_row_mask",
    "same_padding", "transposed_conv2d",
]
