"""Dueling double-DQN over counterfactual candidate actions.

At each step of a dialogue the policy chooses among the N actions the N
counterfactual databases propose for that slot, then the rollout continues
along the chosen database.  The Q-network scores (state, action) pairs with
a dueling decomposition whose advantage baseline is the mean over the
current candidate set; targets follow the double-DQN recipe (main net picks,
target net evaluates).

A small tabular MDP can be pushed through the same update engine with
one-hot embeddings, which is how the learner is graded against exact value
iteration.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .counterfactual import CfDatabase
from .dataset import Episode
from .reward import RewardModel, step_reward
from .seeding import derive_seed


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 256
    batch_size: int = 60
    lr: float = 1e-3
    epochs: int = 20
    gamma: float = 0.9
    case: int = 1                 # 1: update once per dialogue, 2: once per state
    eps_start: float = 0.3
    eps_end: float = 0.01
    sync_every: int = 50
    case1_reduce: str = "mean"    # how a dialogue's TD errors fold into one loss
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.case not in (1, 2):
            raise ValueError("case must be 1 or 2")
        if self.case1_reduce not in ("mean", "sum"):
            raise ValueError("case1_reduce must be 'mean' or 'sum'")
        if self.hidden < 1 or self.batch_size < 1 or self.epochs < 0 or self.sync_every < 1:
            raise ValueError("hidden, batch_size, sync_every must be >= 1, epochs >= 0")


class _Streams:
    """One copy of the network: shared trunk, advantage head, value head."""

    def __init__(self, params: nn.ParamSet, d: int, hidden: int,
                 rng: np.random.Generator):
        self.trunk = nn.Dense(params, "trunk", 2 * d, hidden, rng, activation="tanh")
        self.adv = nn.Dense(params, "adv", hidden, 1, rng)
        self.val = nn.Dense(params, "val", hidden, 1, rng)


def dueling_combine(value: float, advantages: np.ndarray) -> np.ndarray:
    """Q_i = V + A_i - mean(A): shifting every advantage by a constant
    cancels, so only relative preferences survive."""
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.size == 0:
        raise ValueError("empty candidate set: the advantage baseline needs candidates")
    return float(value) + advantages - advantages.mean()


class DuelingQNet:
    """(state, action) scorer with a live copy and a frozen target copy."""

    def __init__(self, d: int, hidden: int, seed: int):
        self.d = d
        self.hidden = hidden
        self.seed = seed
        rng = np.random.default_rng(derive_seed(seed, "d3qn-init"))
        self.params = nn.ParamSet()
        self.main = _Streams(self.params, d, hidden, rng)
        self.target_params = nn.ParamSet()
        self.tgt = _Streams(self.target_params, d, hidden, rng)
        self.sync()

    def sync(self) -> None:
        """Hard-copy the live weights into the target copy."""
        self.target_params.copy_values_from(self.params)

    # -- numpy fast path (no gradients) --------------------------------------

    def _np_forward(self, streams: _Streams, X: np.ndarray) -> np.ndarray:
        h = np.tanh(X @ streams.trunk.W.data + streams.trunk.b.data)
        return h

    def _np_adv(self, streams: _Streams, S: np.ndarray, A: np.ndarray) -> np.ndarray:
        h = self._np_forward(streams, np.concatenate([S, A], axis=1))
        return (h @ streams.adv.W.data + streams.adv.b.data)[:, 0]

    def _np_val(self, streams: _Streams, s: np.ndarray) -> float:
        X = np.concatenate([s, np.zeros_like(s)])[None, :]
        h = self._np_forward(streams, X)
        return float((h @ streams.val.W.data + streams.val.b.data)[0, 0])

    def q_candidates(self, s: np.ndarray, candidates: np.ndarray,
                     which: str = "main") -> np.ndarray:
        """Q over every candidate action at state s."""
        candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
        if candidates.shape[0] == 0:
            raise ValueError("empty candidate set: the advantage baseline needs candidates")
        streams = self.main if which == "main" else self.tgt
        s = np.asarray(s, dtype=np.float64)
        S = np.broadcast_to(s, candidates.shape).copy()
        adv = self._np_adv(streams, S, candidates)
        return dueling_combine(self._np_val(streams, s), adv)

    # -- tensor path (training) ----------------------------------------------

    def q_pred(self, s: np.ndarray, k: int, candidates: np.ndarray) -> nn.Tensor:
        """(1,1) tensor of Q(s, candidates[k]) with gradients into the live copy."""
        candidates = np.atleast_2d(candidates)
        n = candidates.shape[0]
        S = np.broadcast_to(np.asarray(s, dtype=np.float64), candidates.shape)
        X = np.concatenate([S, candidates], axis=1)
        adv = self.main.adv(self.main.trunk(nn.tensor(X)))            # (n, 1)
        x_val = np.concatenate([s, np.zeros_like(s)])[None, :]
        val = self.main.val(self.main.trunk(nn.tensor(x_val)))       # (1, 1)
        pick = np.zeros((1, n))
        pick[0, k] = 1.0
        a_k = nn.matmul(nn.tensor(pick), adv)
        mean_a = nn.matmul(nn.tensor(np.full((1, n), 1.0 / n)), adv)
        return nn.add(val, nn.sub(a_k, mean_a))

    # -- persistence ----------------------------------------------------------

    def save(self, stem) -> None:
        stem = Path(stem)
        meta = {"kind": "dueling-qnet", "d": self.d, "hidden": self.hidden,
                "seed": self.seed}
        stem.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        self.params.save(stem.with_suffix(".main.txt"))
        self.target_params.save(stem.with_suffix(".target.txt"))

    @classmethod
    def load(cls, stem) -> "DuelingQNet":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".meta.json").read_text())
        if meta.get("kind") != "dueling-qnet":
            raise ValueError(f"{stem}: not a dueling-qnet checkpoint")
        net = cls(meta["d"], meta["hidden"], meta["seed"])
        net.params.copy_values_from(nn.ParamSet.load(stem.with_suffix(".main.txt")))
        net.target_params.copy_values_from(nn.ParamSet.load(stem.with_suffix(".target.txt")))
        return net


def q_value(net: DuelingQNet, s: np.ndarray, a: np.ndarray,
            candidate_set: np.ndarray) -> float:
    """Dueling Q of one action, baselined against the given candidate set."""
    candidate_set = np.atleast_2d(np.asarray(candidate_set, dtype=np.float64))
    if candidate_set.shape[0] == 0:
        raise ValueError("empty candidate set: the advantage baseline needs candidates")
    s = np.asarray(s, dtype=np.float64)
    S = np.broadcast_to(s, candidate_set.shape).copy()
    base = net._np_adv(net.main, S, candidate_set).mean()
    adv = net._np_adv(net.main, s[None, :], np.atleast_2d(a))[0]
    return float(net._np_val(net.main, s) + adv - base)


def select_action(net: DuelingQNet, s: np.ndarray,
                  candidates: np.ndarray) -> tuple[int, np.ndarray]:
    """Greedy pick over the candidate set; ties go to the lowest index."""
    q = net.q_candidates(s, candidates)
    k = int(np.argmax(q))
    return k, np.atleast_2d(candidates)[k].copy()


def td_target(net: DuelingQNet, r: float, s_next: np.ndarray | None,
              candidates_next: np.ndarray | None, gamma: float,
              terminal: bool = False) -> float:
    """Double-DQN target: the live copy chooses the next action, the frozen
    copy prices it.  Terminal steps are worth exactly their reward."""
    if terminal:
        return float(r)
    k = int(np.argmax(net.q_candidates(s_next, candidates_next, which="main")))
    q_next = net.q_candidates(s_next, candidates_next, which="target")[k]
    return float(r) + gamma * float(q_next)


# -- dialogue rollouts over counterfactual databases -------------------------


def _check_databases(databases: list[CfDatabase]) -> int:
    if not databases:
        raise ValueError("no counterfactual databases")
    n_dialogues = len(databases[0].episodes)
    for db in databases:
        if len(db.episodes) != n_dialogues:
            raise ValueError(f"database {db.index} has {len(db.episodes)} dialogues, "
                             f"expected {n_dialogues}")
    for j in range(n_dialogues):
        lengths = {db.episodes[j].n_actions for db in databases}
        if len(lengths) != 1:
            raise ValueError(f"dialogue {j}: databases disagree on length {lengths}")
    return n_dialogues


def _rollout(net: DuelingQNet, databases: list[CfDatabase], j: int,
             rng: np.random.Generator | None, epsilon: float
             ) -> tuple[Episode, list[int], list[np.ndarray]]:
    """Assemble dialogue j by stepping through the chosen databases.

    Returns the assembled episode, the chosen database index per step and
    the candidate matrix per step.  rng=None means pure greedy.
    """
    first = databases[0].episodes[j]
    states = [first.states[0]]
    actions, choices, cand_list = [], [], []
    for t in range(first.n_actions):
        cands = np.stack([db.episodes[j].actions[t] for db in databases])
        if rng is not None and rng.random() < epsilon:
            k = int(rng.integers(len(databases)))
        else:
            k = int(np.argmax(net.q_candidates(states[t], cands)))
        choices.append(k)
        cand_list.append(cands)
        actions.append(cands[k])
        states.append(databases[k].episodes[j].states[t + 1])
    ep = Episode(id=f"rollout-{j:04d}", states=np.array(states),
                 actions=np.array(actions), outcome=0.0, source="counterfactual")
    return ep, choices, cand_list


def train_policy(net: DuelingQNet, databases: list[CfDatabase],
                 reward_model: RewardModel, config: PolicyConfig
                 ) -> tuple[DuelingQNet, list[float]]:
    """Fit the scorer on dialogue rollouts; returns per-dialogue mean TD loss.

    Rewards follow the terminal-only gate: zero everywhere except the final
    exchange, which earns the reward model's score of the dialogue actually
    assembled.  Case 1 folds a dialogue's TD errors into one update; case 2
    updates at every state.  The target copy refreshes every sync_every
    optimizer steps.
    """
    n_dialogues = _check_databases(databases)
    opt = nn.Adam(net.params, lr=config.lr)
    rng = np.random.default_rng(derive_seed(config.seed, "policy-train"))
    losses = []
    total = config.epochs * n_dialogues
    done = 0
    updates = 0

    def _update(sq_errors: list[nn.Tensor]) -> None:
        nonlocal updates
        stack = nn.concat_cols(sq_errors)
        loss = nn.tmean(stack) if config.case1_reduce == "mean" else nn.tsum(stack)
        nn.backward(loss)
        opt.step()
        updates += 1
        if updates % config.sync_every == 0:
            net.sync()

    for _ in range(config.epochs):
        for j in range(n_dialogues):
            frac = done / max(1, total - 1)
            epsilon = config.eps_start + (config.eps_end - config.eps_start) * frac
            done += 1
            ep, choices, cand_list = _rollout(net, databases, j, rng, epsilon)
            final_r = step_reward(reward_model, ep, ep.n_turns - 1)
            dialogue_sq = []
            pending = []
            for t, (k, cands) in enumerate(zip(choices, cand_list)):
                terminal = t == len(choices) - 1
                r = final_r if terminal else 0.0
                target = td_target(net, r, None if terminal else ep.states[t + 1],
                                   None if terminal else cand_list[t + 1],
                                   config.gamma, terminal=terminal)
                pred = net.q_pred(ep.states[t], k, cands)
                sq = nn.square(nn.sub(pred, nn.tensor([[target]])))
                dialogue_sq.append(float(sq.data[0, 0]))
                if config.case == 2:
                    _update([sq])
                else:
                    pending.append(sq)
                    if len(pending) == config.batch_size:
                        _update(pending)
                        pending = []
            if pending:
                _update(pending)
            losses.append(float(np.mean(dialogue_sq)))
    return net, losses


def evaluate_policy(net: DuelingQNet, databases: list[CfDatabase],
                    reward_model: RewardModel) -> dict:
    """Greedy pass over every dialogue: cumulative predicted reward plus the
    per-dialogue max and mean Q seen along the rollout."""
    n_dialogues = _check_databases(databases)
    rewards, max_q, mean_q, episodes = [], [], [], []
    for j in range(n_dialogues):
        ep, _, cand_list = _rollout(net, databases, j, None, 0.0)
        qs = np.concatenate([net.q_candidates(ep.states[t], cands)
                             for t, cands in enumerate(cand_list)])
        rewards.append(step_reward(reward_model, ep, ep.n_turns - 1))
        max_q.append(float(qs.max()))
        mean_q.append(float(qs.mean()))
        episodes.append(ep)
    return {"cumulative": np.cumsum(rewards) if rewards else np.zeros(0),
            "max_q": np.array(max_q), "mean_q": np.array(mean_q),
            "episodes": episodes}


def write_q_stats(path, stats: dict) -> None:
    """Columnar dump of the evaluation statistics, one row per dialogue."""
    cum, mx, mn = stats["cumulative"], stats["max_q"], stats["mean_q"]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("index\tcumulative\tmax_q\tmean_q\n")
        for i in range(len(cum)):
            fh.write(f"{i}\t{float(cum[i])!r}\t{float(mx[i])!r}\t{float(mn[i])!r}\n")


def read_q_stats(path) -> dict:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "index\tcumulative\tmax_q\tmean_q":
        raise ValueError(f"{path}: not a q-stats file")
    rows = [line.split("\t") for line in lines[1:]]
    return {"cumulative": np.array([float(r[1]) for r in rows]),
            "max_q": np.array([float(r[2]) for r in rows]),
            "mean_q": np.array([float(r[3]) for r in rows])}


# -- tabular adapter ----------------------------------------------------------


@dataclass(frozen=True)
class DiscreteMdp:
    """Deterministic finite MDP; states and actions index one-hot embeddings."""

    n_states: int
    n_actions: int
    next_state: np.ndarray = field(repr=False)   # (S, A) int
    rewards: np.ndarray = field(repr=False)      # (S, A) float
    terminal: frozenset = frozenset()

    def __post_init__(self):
        ns = np.asarray(self.next_state)
        rw = np.asarray(self.rewards)
        if ns.shape != (self.n_states, self.n_actions) or rw.shape != ns.shape:
            raise ValueError("next_state and rewards must both be (S, A)")
        if ns.min() < 0 or ns.max() >= self.n_states:
            raise ValueError("next_state entries out of range")

    @property
    def embed_dim(self) -> int:
        return max(self.n_states, self.n_actions)

    def state_vec(self, s: int) -> np.ndarray:
        v = np.zeros(self.embed_dim)
        v[s] = 1.0
        return v

    def action_vec(self, a: int) -> np.ndarray:
        v = np.zeros(self.embed_dim)
        v[a] = 1.0
        return v

    def action_matrix(self) -> np.ndarray:
        return np.stack([self.action_vec(a) for a in range(self.n_actions)])


def value_iteration(mdp: DiscreteMdp, gamma: float, tol: float = 1e-10,
                    max_iter: int = 100_000) -> np.ndarray:
    """Exact Q* by backward induction; terminal states have value zero."""
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        V = Q.max(axis=1)
        V[[s for s in mdp.terminal]] = 0.0
        nxt = np.asarray(mdp.next_state)
        Q_new = np.asarray(mdp.rewards) + gamma * V[nxt]
        if np.abs(Q_new - Q).max() < tol:
            return Q_new
        Q = Q_new
    raise RuntimeError("value iteration did not converge")


def train_policy_mdp(net: DuelingQNet, mdp: DiscreteMdp, config: PolicyConfig,
                     rollouts_per_epoch: int = 1, horizon: int = 30
                     ) -> tuple[DuelingQNet, list[float]]:
    """Drive the same TD machinery with environment transitions instead of
    database rollouts; rewards are the MDP's own, not terminal-gated."""
    if net.d != mdp.embed_dim:
        raise ValueError(f"net dimension {net.d} != adapter embedding {mdp.embed_dim}")
    opt = nn.Adam(net.params, lr=config.lr)
    rng = np.random.default_rng(derive_seed(config.seed, "policy-train"))
    cands = mdp.action_matrix()
    starts = [s for s in range(mdp.n_states) if s not in mdp.terminal]
    losses = []
    total = config.epochs * rollouts_per_epoch * len(starts)
    done = 0
    updates = 0

    def _update(sq_errors):
        nonlocal updates
        stack = nn.concat_cols(sq_errors)
        loss = nn.tmean(stack) if config.case1_reduce == "mean" else nn.tsum(stack)
        nn.backward(loss)
        opt.step()
        updates += 1
        if updates % config.sync_every == 0:
            net.sync()

    for _ in range(config.epochs):
        for _ in range(rollouts_per_epoch):
            for start in starts:
                frac = done / max(1, total - 1)
                epsilon = config.eps_start + (config.eps_end - config.eps_start) * frac
                done += 1
                s = start
                episode_sq = []
                pending = []
                for _step in range(horizon):
                    s_vec = mdp.state_vec(s)
                    if rng.random() < epsilon:
                        a = int(rng.integers(mdp.n_actions))
                    else:
                        a = int(np.argmax(net.q_candidates(s_vec, cands)))
                    s2 = int(mdp.next_state[s, a])
                    r = float(mdp.rewards[s, a])
                    terminal = s2 in mdp.terminal
                    target = td_target(net, r, None if terminal else mdp.state_vec(s2),
                                       None if terminal else cands,
                                       config.gamma, terminal=terminal)
                    pred = net.q_pred(s_vec, a, cands)
                    sq = nn.square(nn.sub(pred, nn.tensor([[target]])))
                    episode_sq.append(float(sq.data[0, 0]))
                    if config.case == 2:
                        _update([sq])
                    else:
                        pending.append(sq)
                        if len(pending) == config.batch_size:
                            _update(pending)
                            pending = []
                    s = s2
                    if terminal:
                        break
                if pending:
                    _update(pending)
                losses.append(float(np.mean(episode_sq)))
    return net, losses
