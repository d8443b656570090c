"""Synthetic persuasion world with known causal dynamics.

The true transition is

    s_{t+1} = tanh(gain * (A_s s_t + A_a a_t + A_L Lc)) + eps_{t+1}

with Lc the centered trait vector (L - 3) / 2 and eps drawn outside the
nonlinearity.  Additive noise makes abduction exact: given a factual
transition, eps = s_{t+1} - tanh(...), so the world can answer any
"what if the action had been a'" query with zero model error.  Learned
counterfactual machinery is graded against these oracles.

The outcome is a donation-like scalar in [0, 20] read off the final
state.  The behavior policy leaks the user's traits into its actions,
which gives the trait regressor something real to recover.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Episode, TRAIT_DIM, structure_counts
from .seeding import derive_seed


@dataclass
class WorldConfig:
    d: int = 8
    T: int = 9                      # utterance budget per dialogue
    trait_dim: int = TRAIT_DIM
    noise_scale: float = 0.05       # sigma of the exogenous noise
    nonlinearity_gain: float = 1.0
    seed: int = 0
    # behavior-policy shaping
    trait_gain: float = 1.0         # how strongly actions encode the traits
    action_noise: float = 0.05
    user_bias_scale: float = 0.1
    state_feedback: float = 0.3     # scale of the policy's dependence on the state
    action_gain: float = 1.0        # scale of A_a, i.e. how much actions move the state
    outcome_gain: float = 2.0       # sharpness of the outcome sigmoid

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.trait_dim != TRAIT_DIM:
            raise ValueError(f"trait_dim is fixed at {TRAIT_DIM}")
        if self.T < 3:
            raise ValueError("T must allow at least one exchange")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass
class SynthUser:
    traits: np.ndarray              # (5,) in [1, 5], fixed for the episode
    bias: np.ndarray                # (d,) idiosyncratic action offset


def center_traits(traits: np.ndarray) -> np.ndarray:
    """Map the [1,5] OCEAN scale to roughly [-1, 1]."""
    return (np.asarray(traits, dtype=np.float64) - 3.0) / 2.0


class GroundTruthScm:
    """The true f*, plus exact counterfactual answers via recorded noise."""

    def __init__(self, A_s, A_a, A_L, w, gain: float, noise_scale: float,
                 outcome_gain: float):
        self.A_s = np.asarray(A_s, dtype=np.float64)
        self.A_a = np.asarray(A_a, dtype=np.float64)
        self.A_L = np.asarray(A_L, dtype=np.float64)
        self.w = np.asarray(w, dtype=np.float64)
        self.gain = float(gain)
        self.noise_scale = float(noise_scale)
        self.outcome_gain = float(outcome_gain)
        d = self.A_s.shape[0]
        if self.A_s.shape != (d, d) or self.A_a.shape != (d, d):
            raise ValueError("A_s and A_a must be square d x d")
        if self.A_L.shape != (d, TRAIT_DIM) or self.w.shape != (d,):
            raise ValueError("A_L must be d x 5 and w length d")
        radius = float(np.abs(np.linalg.eigvals(self.A_s)).max())
        if radius > 0.95 + 1e-9:
            raise ValueError(f"spectral radius of A_s is {radius:.4f} > 0.95")

    @classmethod
    def from_config(cls, cfg: WorldConfig) -> "GroundTruthScm":
        rng = np.random.default_rng(derive_seed(cfg.seed, "scm"))
        d = cfg.d
        A_s = rng.uniform(-1, 1, (d, d))
        radius = float(np.abs(np.linalg.eigvals(A_s)).max())
        A_s *= 0.95 / radius if radius > 0 else 1.0
        A_a = rng.uniform(-1, 1, (d, d)) * (cfg.action_gain / np.sqrt(d))
        A_L = rng.uniform(-1, 1, (d, TRAIT_DIM)) / np.sqrt(TRAIT_DIM)
        w = rng.uniform(-1, 1, d) / np.sqrt(d)
        return cls(A_s, A_a, A_L, w, cfg.nonlinearity_gain, cfg.noise_scale,
                   cfg.outcome_gain)

    @property
    def d(self) -> int:
        return self.A_s.shape[0]

    def mean_next_state(self, s, a, traits) -> np.ndarray:
        """Deterministic part of the transition (before adding noise)."""
        pre = self.A_s @ s + self.A_a @ a + self.A_L @ center_traits(traits)
        return np.tanh(self.gain * pre)

    def transition(self, s, a, traits, eps) -> np.ndarray:
        return self.mean_next_state(s, a, traits) + eps

    def outcome(self, s_last) -> float:
        z = self.outcome_gain * float(self.w @ s_last)
        return 20.0 / (1.0 + np.exp(-z))

    def to_dict(self) -> dict:
        return {
            "A_s": self.A_s.tolist(), "A_a": self.A_a.tolist(),
            "A_L": self.A_L.tolist(), "w": self.w.tolist(),
            "gain": self.gain, "noise_scale": self.noise_scale,
            "outcome_gain": self.outcome_gain,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "GroundTruthScm":
        return cls(np.array(blob["A_s"]), np.array(blob["A_a"]),
                   np.array(blob["A_L"]), np.array(blob["w"]),
                   blob["gain"], blob["noise_scale"], blob["outcome_gain"])


class BehaviorPolicy:
    """Data-collection policy: linear in state and centered traits, plus
    a per-user bias and exploration noise.  Trait channels enter the first
    five action coordinates directly so the traits are recoverable from
    observed behavior."""

    def __init__(self, cfg: WorldConfig):
        rng = np.random.default_rng(derive_seed(cfg.seed, "behavior"))
        d = cfg.d
        self.B_s = cfg.state_feedback * rng.uniform(-1, 1, (d, d)) / np.sqrt(d)
        B_L = 0.1 * rng.uniform(-1, 1, (d, TRAIT_DIM))
        k = min(d, TRAIT_DIM)   # identity injection on as many channels as fit
        B_L[:k, :k] += cfg.trait_gain * np.eye(k)
        self.B_L = B_L
        self.action_noise = cfg.action_noise

    def __call__(self, s: np.ndarray, user: SynthUser, rng: np.random.Generator) -> np.ndarray:
        a = self.B_s @ s + self.B_L @ center_traits(user.traits) + user.bias
        if self.action_noise > 0:
            a = a + rng.normal(0.0, self.action_noise, a.shape)
        return a


def sample_user(cfg: WorldConfig, rng: np.random.Generator) -> SynthUser:
    traits = np.clip(rng.normal(3.0, 0.8, TRAIT_DIM), 1.0, 5.0)
    bias = rng.normal(0.0, cfg.user_bias_scale, cfg.d)
    return SynthUser(traits=traits, bias=bias)


def rollout_episode(user: SynthUser, policy, scm: GroundTruthScm,
                    cfg: WorldConfig, rng: np.random.Generator,
                    episode_id: str = "ep") -> Episode:
    """Roll the true world forward, recording every noise draw for oracles."""
    n_states, n_actions = structure_counts(cfg.T)
    d = cfg.d
    states = np.zeros((n_states, d))
    actions = np.zeros((n_actions, d))
    noises = np.zeros((n_states, d))
    noises[0] = rng.normal(0.0, cfg.noise_scale, d)
    states[0] = scm.transition(np.zeros(d), np.zeros(d), user.traits, noises[0])
    for t in range(n_actions):
        actions[t] = policy(states[t], user, rng)
        eps = rng.normal(0.0, cfg.noise_scale, d)
        noises[t + 1] = eps
        states[t + 1] = scm.transition(states[t], actions[t], user.traits, eps)
    return Episode(id=episode_id, states=states, actions=actions,
                   outcome=scm.outcome(states[-1]), source="synthetic",
                   traits=user.traits, noises=noises)


def oracle_counterfactual(scm: GroundTruthScm, episode: Episode, t: int,
                          a_alt: np.ndarray) -> np.ndarray:
    """Exact one-step counterfactual: factual noise, alternative action."""
    if episode.noises is None or episode.traits is None:
        raise ValueError("oracle needs recorded noises and traits (synthetic episodes)")
    if not 0 <= t < episode.n_actions:
        raise IndexError(f"step {t} outside [0, {episode.n_actions})")
    return scm.transition(episode.states[t], np.asarray(a_alt, dtype=np.float64),
                          episode.traits, episode.noises[t + 1])


def oracle_rollout(scm: GroundTruthScm, episode: Episode,
                   alt_actions: np.ndarray) -> np.ndarray:
    """Exact multi-step counterfactual trajectory under a full action swap.

    Starts from the factual s_0 and reuses the factual noise at each step,
    which is the ground-truth answer to "replay this dialogue under these
    actions".  Returns the (n_states, d) state sequence.
    """
    if episode.noises is None or episode.traits is None:
        raise ValueError("oracle needs recorded noises and traits (synthetic episodes)")
    alt_actions = np.asarray(alt_actions, dtype=np.float64)
    if alt_actions.shape != episode.actions.shape:
        raise ValueError(f"alt actions shape {alt_actions.shape} != {episode.actions.shape}")
    states = np.zeros_like(episode.states)
    states[0] = episode.states[0]
    for t in range(episode.n_actions):
        states[t + 1] = scm.transition(states[t], alt_actions[t], episode.traits,
                                       episode.noises[t + 1])
    return states


def generate_dataset(cfg: WorldConfig, n_episodes: int) -> tuple[GroundTruthScm, BehaviorPolicy, list[Episode]]:
    """Build the world and roll out a dataset, one derived seed per episode."""
    scm = GroundTruthScm.from_config(cfg)
    policy = BehaviorPolicy(cfg)
    episodes = []
    for i in range(n_episodes):
        rng = np.random.default_rng(derive_seed(cfg.seed, f"episode.{i}"))
        user = sample_user(cfg, rng)
        episodes.append(rollout_episode(user, policy, scm, cfg, rng, episode_id=f"syn-{i:05d}"))
    return scm, policy, episodes
