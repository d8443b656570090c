"""Layer primitives: closed forms at degenerate weights, gradient oracles."""

import numpy as np

import cfdial.nn as nn
from cfdial.nn import ParamSet, tensor, Dense, GatedRecurrentCell, AttentionPool

from helpers import max_rel_error


def test_dense_gradients():
    rng = np.random.default_rng(20)
    ps = ParamSet()
    layer = Dense(ps, "d", 4, 3, rng, activation="tanh")
    x = tensor(rng.uniform(-1, 1, (5, 4)))
    y = tensor(rng.uniform(-1, 1, (5, 3)))

    def loss():
        return nn.tmean(nn.square(nn.sub(layer(x), y)))

    assert max_rel_error(loss, ps) < 1e-4


def test_gated_cell_zero_weights_halves_hidden_state():
    rng = np.random.default_rng(21)
    ps = ParamSet()
    cell = GatedRecurrentCell(ps, "c", 3, 4, rng)
    for _, p in ps.items():
        p.data[...] = 0.0
    h = tensor(rng.uniform(-1, 1, (2, 4)))
    x = tensor(rng.uniform(-1, 1, (2, 3)))
    # z = sigmoid(0) = 0.5 and c = tanh(0) = 0, so h' = 0.5 h
    out = cell(h, x)
    assert np.allclose(out.data, 0.5 * h.data, rtol=0, atol=1e-15)


def test_gated_cell_gradient_through_unrolled_steps():
    rng = np.random.default_rng(22)
    ps = ParamSet()
    cell = GatedRecurrentCell(ps, "c", 3, 4, rng)
    xs = [tensor(rng.uniform(-1, 1, (2, 3))) for _ in range(5)]

    def loss():
        h = cell.initial_state(2)
        for x in xs:
            h = cell(h, x)
        return nn.tmean(nn.square(h))

    assert max_rel_error(loss, ps) < 1e-4


def test_gated_cell_deterministic():
    def run():
        rng = np.random.default_rng(23)
        ps = ParamSet()
        cell = GatedRecurrentCell(ps, "c", 3, 4, rng)
        h = cell.initial_state(1)
        for x in np.linspace(-1, 1, 6):
            h = cell(h, tensor(np.full((1, 3), x)))
        return h.data.copy()

    assert np.array_equal(run(), run())


def test_attention_pool_weights_sum_and_gradient():
    rng = np.random.default_rng(24)
    ps = ParamSet()
    pool = AttentionPool(ps, "att", 4, 6, rng)
    positions = [tensor(rng.uniform(-1, 1, (3, 4))) for _ in range(5)]
    pooled = pool(positions)
    assert pooled.data.shape == (3, 4)
    # pooled vector stays inside the convex hull bound of the inputs
    stacked = np.stack([p.data for p in positions])
    assert np.all(pooled.data <= stacked.max(axis=0) + 1e-12)
    assert np.all(pooled.data >= stacked.min(axis=0) - 1e-12)

    target = tensor(rng.uniform(-1, 1, (3, 4)))

    def loss():
        return nn.tmean(nn.square(nn.sub(pool(positions), target)))

    assert max_rel_error(loss, ps) < 1e-4


def test_attention_pool_single_position_is_identity():
    rng = np.random.default_rng(25)
    ps = ParamSet()
    pool = AttentionPool(ps, "att", 4, 6, rng)
    x = tensor(rng.uniform(-1, 1, (2, 4)))
    assert np.allclose(pool([x]).data, x.data, rtol=0, atol=1e-15)


def test_uniform_init_respects_fan_in_bound():
    rng = np.random.default_rng(26)
    vals = nn.uniform_init(rng, (1000,), 16)
    assert np.all(np.abs(vals) <= 0.25)
    assert np.abs(vals).max() > 0.2  # actually spreads over the range
