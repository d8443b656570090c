"""Dense-tensor autodiff, layers, and Adam; the substrate for every learned model here."""

from .tensor import (Tensor, ShapeError, NonFiniteError, tensor, add, sub, mul, neg, smul,
                     matmul, scale_rows, tanh, sigmoid, leaky_relu, softplus, square,
                     tsum, tmean, concat_cols, slice_cols, softmax_rows, backward)
from .params import ParamSet, uniform_init
from .optim import Adam
from .layers import Dense, GatedRecurrentCell, AttentionPool

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "tensor", "add", "sub", "mul", "neg", "smul",
    "matmul", "scale_rows", "tanh", "sigmoid", "leaky_relu", "softplus", "square",
    "tsum", "tmean", "concat_cols", "slice_cols", "softmax_rows", "backward",
    "ParamSet", "uniform_init", "Adam", "Dense", "GatedRecurrentCell", "AttentionPool",
]
