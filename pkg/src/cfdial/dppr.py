"""Online trait estimation from dialogue turns.

A small attention-pooling regressor maps a window of w exchanges (2w
utterance vectors) to the five OCEAN scores.  During a conversation the
per-turn predictions are aggregated by a running mean, so the estimate at
turn t depends only on completed exchanges, never on the future.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .dataset import TurnWindow, TRAIT_DIM
from .seeding import derive_seed

PRIOR_TRAIT = 3.0   # scale midpoint used before any evidence arrives


@dataclass
class DpprConfig:
    hidden: int = 1024
    batch_size: int = 64
    lr: float = 1e-4
    epochs: int = 100
    window_size: int = 1
    key_dim: int = 16
    folds: int = 5
    seed: int = 0


class TraitRegressor:
    """Attention pool over the window's utterances, then three dense layers."""

    def __init__(self, d: int, window_size: int, hidden: int, key_dim: int, seed: int):
        self.d = d
        self.window_size = window_size
        self.hidden = hidden
        self.key_dim = key_dim
        self.seed = seed
        rng = np.random.default_rng(derive_seed(seed, "dppr-init"))
        self.params = nn.ParamSet()
        self.pool = nn.AttentionPool(self.params, "pool", d, key_dim, rng)
        self.fc1 = nn.Dense(self.params, "fc1", d, hidden, rng, activation="tanh")
        self.fc2 = nn.Dense(self.params, "fc2", hidden, hidden, rng, activation="tanh")
        self.head = nn.Dense(self.params, "head", hidden, TRAIT_DIM, rng)

    def forward(self, X: np.ndarray) -> nn.Tensor:
        """X has shape (batch, 2w, d); returns a (batch, 5) tensor."""
        if X.ndim != 3 or X.shape[1] != 2 * self.window_size or X.shape[2] != self.d:
            raise nn.ShapeError(f"window batch shape {X.shape}, "
                                f"want (*, {2 * self.window_size}, {self.d})")
        positions = [nn.tensor(np.ascontiguousarray(X[:, i, :])) for i in range(X.shape[1])]
        pooled = self.pool(positions)
        return self.head(self.fc2(self.fc1(pooled)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X).data.copy()

    # -- persistence -------------------------------------------------------

    def save(self, stem) -> None:
        stem = Path(stem)
        meta = {"kind": "trait-regressor", "d": self.d, "window_size": self.window_size,
                "hidden": self.hidden, "key_dim": self.key_dim, "seed": self.seed}
        stem.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        self.params.save(stem.with_suffix(".params.txt"))

    @classmethod
    def load(cls, stem) -> "TraitRegressor":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".meta.json").read_text())
        if meta.get("kind") != "trait-regressor":
            raise ValueError(f"{stem}: not a trait-regressor checkpoint")
        model = cls(meta["d"], meta["window_size"], meta["hidden"], meta["key_dim"],
                    meta["seed"])
        model.params.copy_values_from(nn.ParamSet.load(stem.with_suffix(".params.txt")))
        return model


def windows_to_arrays(windows: list[TurnWindow]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise ValueError("no windows")
    X = np.stack([w.vectors for w in windows])
    Y = np.stack([w.target for w in windows])
    return X, Y


def train_dppr(windows: list[TurnWindow], config: DpprConfig,
               d: int | None = None) -> tuple[TraitRegressor, list[float]]:
    """Fit the regressor; returns the model and per-epoch mean training loss."""
    X, Y = windows_to_arrays(windows)
    if d is None:
        d = X.shape[2]
    model = TraitRegressor(d, config.window_size, config.hidden, config.key_dim,
                           config.seed)
    if X.shape[1] != 2 * config.window_size:
        raise ValueError(f"windows have {X.shape[1] // 2} turns, config wants "
                         f"{config.window_size}")
    opt = nn.Adam(model.params, lr=config.lr)
    rng = np.random.default_rng(derive_seed(config.seed, "dppr-train"))
    history = []
    n = X.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            pred = model.forward(X[idx])
            loss = nn.tmean(nn.square(nn.sub(pred, nn.tensor(Y[idx]))))
            nn.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        history.append(total / n)
    return model, history


def predict_turn(model: TraitRegressor, window: TurnWindow) -> np.ndarray:
    if window.vectors.shape != (2 * model.window_size, model.d):
        raise nn.ShapeError(f"window shape {window.vectors.shape} does not match model")
    return model.predict(window.vectors[None, :, :])[0]


def progressive_estimate(model: TraitRegressor, states: np.ndarray,
                         actions: np.ndarray, t: int,
                         prior: float = PRIOR_TRAIT) -> np.ndarray:
    """Trait estimate after t completed exchanges of the given dialogue.

    Running mean of the per-turn predictions for every window that fits in
    the first t exchanges; with fewer than window_size exchanges there is
    no evidence yet and the midpoint prior is returned.
    """
    if t < 0 or t > actions.shape[0] or t > states.shape[0]:
        raise IndexError(f"turn count {t} out of range")
    w = model.window_size
    if t < w:
        return np.full(TRAIT_DIM, float(prior))
    rows = []
    for k in range(t - w + 1):
        block = np.empty((2 * w, model.d))
        for j in range(w):
            block[2 * j] = states[k + j]
            block[2 * j + 1] = actions[k + j]
        rows.append(block)
    preds = model.predict(np.stack(rows))
    return preds.mean(axis=0)


def progressive_trace(model: TraitRegressor, states: np.ndarray,
                      actions: np.ndarray, prior: float = PRIOR_TRAIT) -> np.ndarray:
    """L_t for t = 0..n_turns; row t uses only exchanges before t (causal)."""
    n_turns = actions.shape[0]
    out = np.full((n_turns + 1, TRAIT_DIM), float(prior))
    w = model.window_size
    if n_turns < w:
        return out
    blocks = []
    for k in range(n_turns - w + 1):
        block = np.empty((2 * w, model.d))
        for j in range(w):
            block[2 * j] = states[k + j]
            block[2 * j + 1] = actions[k + j]
        blocks.append(block)
    preds = model.predict(np.stack(blocks))      # prediction for window ending at k+w
    csum = np.cumsum(preds, axis=0)
    for t in range(w, n_turns + 1):
        out[t] = csum[t - w] / (t - w + 1)
    return out


def cross_validate(windows: list[TurnWindow], config: DpprConfig,
                   folds: int | None = None) -> list[dict]:
    """Disjoint seeded folds; returns one metric dict per fold."""
    folds = config.folds if folds is None else folds
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if len(windows) < folds:
        raise ValueError("fewer windows than folds")
    order = np.random.default_rng(derive_seed(config.seed, "dppr-cv")).permutation(len(windows))
    parts = np.array_split(order, folds)
    results = []
    for i in range(folds):
        test_idx = set(parts[i].tolist())
        train = [windows[j] for j in order if j not in test_idx]
        test = [windows[j] for j in sorted(test_idx)]
        model, _ = train_dppr(train, config)
        X, Y = windows_to_arrays(test)
        results.append(regression_metrics(model.predict(X), Y))
    return results


def regression_metrics(predictions: np.ndarray, targets: np.ndarray) -> dict:
    """MSE, RMSE, MAPE, R2, MAE pooled over samples and output dimensions."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {targets.shape}")
    if predictions.ndim == 1:
        predictions = predictions[:, None]
        targets = targets[:, None]
    if predictions.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    col_means = targets.mean(axis=0)
    ss_tot = float(((targets - col_means) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("targets are all identical; R2 undefined")
    if np.any(targets == 0.0):
        raise ValueError("MAPE undefined with zero targets; exclude or offset them")
    err = predictions - targets
    mse = float((err ** 2).mean())
    return {
        "MSE": mse,
        "RMSE": float(np.sqrt(mse)),
        "MAPE": float((np.abs(err) / np.abs(targets)).mean()),
        "R2": 1.0 - float((err ** 2).sum()) / ss_tot,
        "MAE": float(np.abs(err).mean()),
    }
