"""Shared test utilities, chiefly the finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np

from cfdial.nn import ParamSet, backward


def analytic_grads(build_loss, params: ParamSet) -> dict[str, np.ndarray]:
    params.zero_grad()
    loss = build_loss()
    backward(loss)
    out = {}
    for name, p in params.items():
        out[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    params.zero_grad()
    return out


def numeric_grads(build_loss, params: ParamSet, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central finite differences of the loss w.r.t. every parameter entry."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            f_plus = float(build_loss().data)
            flat[i] = keep - h
            f_minus = float(build_loss().data)
            flat[i] = keep
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        out[name] = g
    return out


def max_rel_error(build_loss, params: ParamSet, h: float = 1e-5) -> float:
    """Worst relative disagreement between tape gradients and finite differences."""
    ana = analytic_grads(build_loss, params)
    num = numeric_grads(build_loss, params, h=h)
    worst = 0.0
    for name in ana:
        a, n = ana[name], num[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
