"""Terminal-only outcome model.

A dialogue earns its reward once, at the final exchange: a recurrent net
reads the whole (state, action) sequence and predicts the donation-valued
outcome.  Every earlier turn is worth exactly zero, so the policy learner
sees a sparse terminal signal, just like the data collection did.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .dataset import Episode
from .seeding import derive_seed

OUTCOME_CAP = 20.0


@dataclass(frozen=True)
class RewardConfig:
    hidden: int = 256
    batch_size: int = 64
    lr: float = 1e-4
    epochs: int = 1000
    val_ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("hidden and batch_size must be >= 1, epochs >= 0")
        if not 0.0 <= self.val_ratio < 1.0:
            raise ValueError("val_ratio must be in [0, 1)")


class RewardModel:
    """Gated recurrent cell over concatenated (s_t, a_t) steps plus the
    closing state, linear readout on the final hidden state.  Evaluation
    clamps to [0, 20]; training uses the raw output so the gradient never
    dies at the cap."""

    def __init__(self, d: int, hidden: int, seed: int):
        self.d = d
        self.hidden = hidden
        self.seed = seed
        rng = np.random.default_rng(derive_seed(seed, "reward-init"))
        self.params = nn.ParamSet()
        self.cell = nn.GatedRecurrentCell(self.params, "cell", 2 * d, hidden, rng)
        self.head = nn.Dense(self.params, "head", hidden, 1, rng)

    def forward(self, X: np.ndarray, mask: np.ndarray) -> nn.Tensor:
        """X (batch, steps, 2d), mask (batch, steps) with 1 = real exchange.

        Masked steps leave the hidden state untouched, so trailing padding
        cannot move the prediction.
        """
        if X.ndim != 3 or X.shape[2] != 2 * self.d:
            raise nn.ShapeError(f"step batch shape {X.shape}, want (*, *, {2 * self.d})")
        if mask.shape != X.shape[:2]:
            raise nn.ShapeError(f"mask shape {mask.shape} does not match {X.shape[:2]}")
        h = self.cell.initial_state(X.shape[0])
        for t in range(X.shape[1]):
            h_new = self.cell(h, nn.tensor(X[:, t, :]))
            m = mask[:, t:t + 1].astype(np.float64)
            h = nn.add(nn.scale_rows(h_new, nn.tensor(m)),
                       nn.scale_rows(h, nn.tensor(1.0 - m)))
        return self.head(h)

    def predict(self, episodes: list[Episode]) -> np.ndarray:
        """Clamped outcome prediction, one scalar per episode."""
        if not episodes:
            return np.zeros(0)
        X, mask, _ = episodes_to_steps(episodes, self.d)
        raw = self.forward(X, mask).data[:, 0]
        return np.clip(raw, 0.0, OUTCOME_CAP)

    # -- persistence ---------------------------------------------------------

    def save(self, stem) -> None:
        stem = Path(stem)
        meta = {"kind": "reward-model", "d": self.d, "hidden": self.hidden,
                "seed": self.seed}
        stem.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        self.params.save(stem.with_suffix(".params.txt"))

    @classmethod
    def load(cls, stem) -> "RewardModel":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".meta.json").read_text())
        if meta.get("kind") != "reward-model":
            raise ValueError(f"{stem}: not a reward-model checkpoint")
        model = cls(meta["d"], meta["hidden"], meta["seed"])
        model.params.copy_values_from(nn.ParamSet.load(stem.with_suffix(".params.txt")))
        return model


def episodes_to_steps(episodes: list[Episode], d: int | None = None
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(X, mask, y): step inputs, the real-step mask, and outcome targets.

    Step t is concat(s_t, a_t); the closing state, which has no action after
    it, rides in one extra step with a zeroed action slot.  Dialogues shorter
    than the longest get trailing masked padding.
    """
    if not episodes:
        raise ValueError("no episodes")
    if d is None:
        d = episodes[0].d
    steps = max(ep.n_turns for ep in episodes) + 1
    X = np.zeros((len(episodes), steps, 2 * d))
    mask = np.zeros((len(episodes), steps))
    y = np.zeros(len(episodes))
    for i, ep in enumerate(episodes):
        if ep.d != d:
            raise ValueError(f"episode {ep.id}: dimension {ep.d} != {d}")
        n = ep.n_turns
        X[i, :n] = np.concatenate([ep.states[:n], ep.actions[:n]], axis=1)
        X[i, n, :d] = ep.states[n]
        mask[i, :n + 1] = 1.0
        y[i] = ep.outcome
    return X, mask, y


def train_reward(episodes: list[Episode], config: RewardConfig,
                 d: int | None = None) -> tuple[RewardModel, dict]:
    """Fit on squared error of the raw output; returns per-epoch mean train
    loss and, when val_ratio carves out at least one episode, validation MSE."""
    if not episodes:
        raise ValueError("no episodes")
    for ep in episodes:
        if ep.outcome > OUTCOME_CAP:
            raise ValueError(f"episode {ep.id}: outcome {ep.outcome} above the "
                             f"{OUTCOME_CAP} filter threshold; filter first")
    rng = np.random.default_rng(derive_seed(config.seed, "reward-train"))
    n_val = int(len(episodes) * config.val_ratio)
    order = rng.permutation(len(episodes))
    val = [episodes[i] for i in order[:n_val]]
    train = [episodes[i] for i in order[n_val:]]
    if d is None:
        d = train[0].d
    X, mask, y = episodes_to_steps(train, d)
    model = RewardModel(d, config.hidden, config.seed)
    opt = nn.Adam(model.params, lr=config.lr)
    history = {"train_mse": [], "val_mse": []}
    n = len(train)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            pred = model.forward(X[idx], mask[idx])
            loss = nn.tmean(nn.square(nn.sub(pred, nn.tensor(y[idx, None]))))
            nn.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        history["train_mse"].append(total / n)
        if val:
            err = model.predict(val) - np.array([ep.outcome for ep in val])
            history["val_mse"].append(float(np.mean(err ** 2)))
    return model, history


def step_reward(model: RewardModel, episode: Episode, t: int) -> float:
    """Reward of exchange t: zero before the final exchange, the model's
    prediction at it.  The zero branch never consults the model."""
    last = episode.n_turns - 1
    if t < 0 or t > last:
        raise IndexError(f"exchange {t} out of range for {episode.n_turns} exchanges")
    if t < last:
        return 0.0
    return float(model.predict([episode])[0])


def cumulative_rewards(model: RewardModel, episodes: list[Episode]) -> np.ndarray:
    """Running sum of terminal predictions in corpus order."""
    if not episodes:
        return np.zeros(0)
    return np.cumsum([step_reward(model, ep, ep.n_turns - 1) for ep in episodes])


def write_cumulative_curve(path, sums: np.ndarray) -> None:
    """Columnar dump, one `index value` row per dialogue."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("index\tcumulative\n")
        for i, v in enumerate(np.asarray(sums, dtype=np.float64)):
            fh.write(f"{i}\t{float(v)!r}\n")


def read_cumulative_curve(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "index\tcumulative":
        raise ValueError(f"{path}: not a cumulative-curve file")
    return np.array([float(line.split("\t")[1]) for line in lines[1:]])
