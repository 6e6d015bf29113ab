"""Minimal dense-network substrate: tensors, a recording tape, optimisers."""

from .checkpoint import load, save
from .gradcheck import grad_check
from .layers import MLP
from .params import ParameterStore, adam_step, sgd_step
from .tensor import (Tape, Tensor, activation, concat, cross_entropy, linear, mean_pool,
                     prefix_mean, softmax, softmax_cross_entropy)

__all__ = [
    "MLP", "ParameterStore", "Tape", "Tensor", "activation", "adam_step", "concat", "cross_entropy",
    "grad_check", "linear", "load", "mean_pool", "prefix_mean", "save", "sgd_step", "softmax",
    "softmax_cross_entropy",
]
