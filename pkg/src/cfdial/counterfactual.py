"""Counterfactual dialogue databases.

A database is a full copy of the corpus in which every persuader action has
been re-sampled from the recorded actions and every next state comes from the
learned transition model instead of the transcript.  The opening state is
kept bit-exact, so each counterfactual dialogue answers "what if the same
conversation had started identically but the persuader had said something
else".

Action re-sampling strategies differ only in which slots of each source
dialogue are eligible:

    variant 1: every recorded action
    variant 2: drop each dialogue's opening action
    variant 3: drop each dialogue's first three actions

Openers are formulaic (greetings, task framing), so excluding them biases the
pool toward actions that carry persuasive content.
"""

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .bicogan import TransitionGan, generate_counterfactual
from .dataset import Episode
from .dppr import PRIOR_TRAIT, TRAIT_DIM, TraitRegressor, progressive_estimate

_EXCLUDED_PREFIX = {1: 0, 2: 1, 3: 3}


@dataclass(frozen=True)
class StrategySpec:
    """Action-pool policy: which recorded actions may replace which turns."""

    variant: int
    seed: int = 0

    def __post_init__(self):
        if self.variant not in _EXCLUDED_PREFIX:
            raise ValueError(f"unknown strategy variant {self.variant}; pick 1, 2 or 3")

    @property
    def excluded_prefix(self) -> int:
        """How many leading actions of every dialogue are off limits."""
        return _EXCLUDED_PREFIX[self.variant]


@dataclass
class CfDatabase:
    index: int
    episodes: list[Episode] = field(default_factory=list)
    strategy_variant: int = 1
    predicted_cum_reward: float | None = None

    def __len__(self) -> int:
        return len(self.episodes)


def select_counterfactual_actions(actions_by_dialogue: list[np.ndarray],
                                  strategy: StrategySpec,
                                  rng: np.random.Generator | None = None,
                                  replace: bool = True) -> list[np.ndarray]:
    """Draw a replacement action for every turn of every dialogue.

    The pool is the union of all recorded actions minus each dialogue's
    excluded prefix.  Draws are uniform, with replacement by default; without
    replacement the pool must cover the total turn count.  Output mirrors the
    input structure.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in actions_by_dialogue]
    if not arrays:
        raise ValueError("no dialogues to sample from")
    skip = strategy.excluded_prefix
    eligible = [a[skip:] for a in arrays if a.shape[0] > skip]
    if not eligible:
        raise ValueError(
            f"strategy {strategy.variant} drops the first {skip} actions of every "
            "dialogue and no dialogue is long enough to leave a pool")
    pool = np.concatenate(eligible, axis=0)
    if rng is None:
        rng = np.random.default_rng(strategy.seed)
    need = sum(a.shape[0] for a in arrays)
    if replace:
        picks = rng.integers(0, pool.shape[0], size=need)
    else:
        if need > pool.shape[0]:
            raise ValueError(f"need {need} draws but the pool holds only "
                             f"{pool.shape[0]} actions; enable replacement")
        picks = rng.choice(pool.shape[0], size=need, replace=False)
    out, k = [], 0
    for a in arrays:
        out.append(pool[picks[k:k + a.shape[0]]].copy())
        k += a.shape[0]
    return out


def build_cf_database(model: TransitionGan, source_episodes: list[Episode],
                      trait_model: TraitRegressor | None, strategy: StrategySpec,
                      seed: int, index: int = 0, noise_mode: str = "abducted",
                      trait_source: str = "counterfactual",
                      replace: bool = True) -> CfDatabase:
    """Replay the whole corpus with re-sampled actions through the model.

    Per episode: keep s_0, then alternate sampled action / generated next
    state for as many exchanges as the source had.  The trait estimate fed to
    the generator tracks the counterfactual prefix as it grows
    (trait_source="counterfactual"); "factual" reuses the source dialogue's
    trace instead, which isolates the transition model in ablations.  With no
    trait model the source's stored traits (or the scale midpoint) stand in.

    Abducted noise is looked up from the factual transition at the same turn,
    so the only intervention is the action swap.
    """
    if trait_source not in ("counterfactual", "factual"):
        raise ValueError(f"unknown trait_source {trait_source!r}")
    for ep in source_episodes:
        if ep.orig_len != ep.n_utterances:
            raise ValueError(f"episode {ep.id} is padded; build databases from "
                             "unpadded episodes and pad afterwards")
        if ep.d != model.d:
            raise ValueError(f"episode {ep.id}: dimension {ep.d} != model d={model.d}")
    rng = np.random.default_rng(seed)
    sampled = select_counterfactual_actions([ep.actions for ep in source_episodes],
                                            strategy, rng=rng, replace=replace)
    cf_episodes = []
    for ep, a_cf in zip(source_episodes, sampled):
        n = ep.n_actions
        states = np.empty_like(ep.states)
        states[0] = ep.states[0]
        L = ep.traits if ep.traits is not None else np.full(TRAIT_DIM, PRIOR_TRAIT)
        for t in range(n):
            if trait_model is not None:
                if trait_source == "counterfactual":
                    L = progressive_estimate(trait_model, states, a_cf, t)
                else:
                    L = progressive_estimate(trait_model, ep.states, ep.actions, t)
            states[t + 1] = generate_counterfactual(
                model, states[t], a_cf[t], L, noise_mode=noise_mode,
                s_next_factual=ep.states[t + 1],
                rng=rng if noise_mode == "sampled" else None)
        cf_episodes.append(Episode(
            id=f"cf{index:03d}-{ep.id}", states=states, actions=a_cf,
            outcome=0.0, source="counterfactual", traits=np.asarray(L, dtype=np.float64),
            db_index=index))
    return CfDatabase(index=index, episodes=cf_episodes,
                      strategy_variant=strategy.variant)


def alignment_error(cf_db: CfDatabase, source_episodes: list[Episode]) -> float:
    """Mean L2 distance between generated and factual next states.

    Diagnostic for how far a strategy's databases drift from the transcript;
    the opening states are shared by construction and not counted.
    """
    if len(cf_db.episodes) != len(source_episodes):
        raise ValueError(f"database has {len(cf_db.episodes)} episodes, "
                         f"source has {len(source_episodes)}")
    dists = []
    for cf, ep in zip(cf_db.episodes, source_episodes):
        if cf.n_states != ep.n_states:
            raise ValueError(f"episode {ep.id}: length mismatch")
        if cf.n_states > 1:
            dists.append(np.linalg.norm(cf.states[1:] - ep.states[1:], axis=1))
    if not dists:
        return 0.0
    return float(np.concatenate(dists).mean())


def balance_select(databases: list[CfDatabase], ground_truth_cum_reward: float,
                   n_keep: int) -> list[CfDatabase]:
    """Keep the n_keep databases closest to the ground-truth cumulative reward,
    half from above and half from below.

    Exactly ceil(n/2) must exceed the target and floor(n/2) fall short;
    databases that hit it exactly sit on neither side.  Ties in distance are
    broken by database index, so the result ignores input order.
    """
    if n_keep < 0:
        raise ValueError("n_keep must be non-negative")
    for db in databases:
        if db.predicted_cum_reward is None:
            raise ValueError(f"database {db.index} has no predicted cumulative reward")
    gt = float(ground_truth_cum_reward)
    above = sorted((db for db in databases if db.predicted_cum_reward > gt),
                   key=lambda db: (abs(db.predicted_cum_reward - gt), db.index))
    below = sorted((db for db in databases if db.predicted_cum_reward < gt),
                   key=lambda db: (abs(db.predicted_cum_reward - gt), db.index))
    need_above = ceil(n_keep / 2)
    need_below = n_keep // 2
    if len(above) < need_above or len(below) < need_below:
        raise ValueError(
            f"cannot balance: need {need_above} above and {need_below} below "
            f"ground truth {gt}, have {len(above)} above and {len(below)} below")
    kept = above[:need_above] + below[:need_below]
    return sorted(kept, key=lambda db: db.index)
