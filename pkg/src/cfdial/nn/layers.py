"""Layer primitives: dense, gated recurrent cell, attention pooling.

Each layer registers its parameters in a caller-supplied ParamSet under a
name prefix, so a whole model serializes through one ParamSet and the
optimizer sees every leaf.
"""

from __future__ import annotations

import numpy as np

from .tensor import (Tensor, ShapeError, tensor, add, sub, mul, smul, matmul,
                     tanh, sigmoid, leaky_relu, scale_rows, softmax_rows,
                     concat_cols, slice_cols)
from .params import ParamSet, uniform_init


class Dense:
    """y = activation(x @ W + b). Activation is one of
    None | 'tanh' | 'sigmoid' | 'leaky_relu'."""

    def __init__(self, params: ParamSet, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator, activation: str | None = None,
                 leaky_slope: float = 0.2):
        self.W = params.add(f"{prefix}.W", uniform_init(rng, (n_in, n_out), n_in))
        self.b = params.add(f"{prefix}.b", uniform_init(rng, (n_out,), n_in))
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.n_in = n_in
        self.n_out = n_out

    def __call__(self, x: Tensor) -> Tensor:
        h = add(matmul(x, self.W), self.b)
        if self.activation is None:
            return h
        if self.activation == "tanh":
            return tanh(h)
        if self.activation == "sigmoid":
            return sigmoid(h)
        if self.activation == "leaky_relu":
            return leaky_relu(h, self.leaky_slope)
        raise ValueError(f"unknown activation {self.activation!r}")


class GatedRecurrentCell:
    """Single-gate recurrent cell.

    z = sigmoid(x Wz + h Uz + bz)      update gate
    c = tanh   (x Wc + h Uc + bc)      candidate state
    h' = (1 - z) * h + z * c

    With all-zero weights z = 0.5 and c = 0, so h' = 0.5 * h; a unit test
    pins that closed form.
    """

    def __init__(self, params: ParamSet, prefix: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator):
        self.Wz = params.add(f"{prefix}.Wz", uniform_init(rng, (n_in, n_hidden), n_in))
        self.Uz = params.add(f"{prefix}.Uz", uniform_init(rng, (n_hidden, n_hidden), n_hidden))
        self.bz = params.add(f"{prefix}.bz", uniform_init(rng, (n_hidden,), n_in))
        self.Wc = params.add(f"{prefix}.Wc", uniform_init(rng, (n_in, n_hidden), n_in))
        self.Uc = params.add(f"{prefix}.Uc", uniform_init(rng, (n_hidden, n_hidden), n_hidden))
        self.bc = params.add(f"{prefix}.bc", uniform_init(rng, (n_hidden,), n_in))
        self.n_in = n_in
        self.n_hidden = n_hidden

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.n_in:
            raise ShapeError(f"cell input has shape {x.data.shape}, want (*, {self.n_in})")
        if h.data.shape != (x.data.shape[0], self.n_hidden):
            raise ShapeError(f"hidden state shape {h.data.shape} does not match input batch")
        z = sigmoid(add(add(matmul(x, self.Wz), matmul(h, self.Uz)), self.bz))
        c = tanh(add(add(matmul(x, self.Wc), matmul(h, self.Uc)), self.bc))
        # h' = h - z*h + z*c
        return add(sub(h, mul(z, h)), mul(z, c))

    def initial_state(self, batch: int) -> Tensor:
        return tensor(np.zeros((batch, self.n_hidden)))


class AttentionPool:
    """Scaled dot-product attention pooling over a fixed set of positions.

    Input is one (batch, d) matrix per position.  Keys come from a shared
    projection, the query is a single learned vector, and the output is
    the attention-weighted sum of the raw position vectors:

        score_i = (x_i Wk) q / sqrt(p)
        w = softmax over positions
        pooled = sum_i w_i * x_i
    """

    def __init__(self, params: ParamSet, prefix: str, d: int, key_dim: int,
                 rng: np.random.Generator):
        self.Wk = params.add(f"{prefix}.Wk", uniform_init(rng, (d, key_dim), d))
        self.q = params.add(f"{prefix}.q", uniform_init(rng, (key_dim, 1), key_dim))
        self.d = d
        self.key_dim = key_dim

    def __call__(self, positions: list[Tensor]) -> Tensor:
        if not positions:
            raise ShapeError("attention pool needs at least one position")
        scale = 1.0 / np.sqrt(self.key_dim)
        scores = [smul(matmul(matmul(x, self.Wk), self.q), scale) for x in positions]
        weights = softmax_rows(concat_cols(scores))
        pooled = None
        for i, x in enumerate(positions):
            term = scale_rows(x, slice_cols(weights, i, i + 1))
            pooled = term if pooled is None else add(pooled, term)
        return pooled
