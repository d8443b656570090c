"""Episode container, padding, windowing, splits, and the on-disk format.

An episode is one dialogue as alternating embedding vectors: user
(persuadee) utterances are states, system (persuader) utterances are
actions, and the sequence starts and ends with a state, so
|states| = |actions| + 1.  One turn = one state/action exchange.

The file format is line-oriented JSON: a self-describing header line,
then one record per episode.  Floats are serialized via repr and parse
back to the identical bits, which makes round trips exact and the file
diffable.  The same format is the contract for external exporters that
produce corpus episodes (source "corpus", d=768).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

SCHEMA_VERSION = 1
TRAIT_DIM = 5

_SOURCES = ("synthetic", "corpus", "counterfactual")


@dataclass
class Episode:
    id: str
    states: np.ndarray            # (n_states, d)
    actions: np.ndarray           # (n_actions, d) with n_states = n_actions + 1
    outcome: float
    source: str = "synthetic"
    traits: np.ndarray | None = None    # (5,) ground-truth or annotated OCEAN
    orig_len: int = -1                  # utterance count before padding; -1 = unpadded
    noises: np.ndarray | None = None    # (n_states, d) recorded exogenous noise (synthetic)
    db_index: int | None = None         # set on counterfactual-database episodes

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.traits is not None:
            self.traits = np.asarray(self.traits, dtype=np.float64)
        if self.noises is not None:
            self.noises = np.asarray(self.noises, dtype=np.float64)
        if self.orig_len < 0:
            self.orig_len = self.n_utterances
        self.validate()

    # -- structure ---------------------------------------------------------

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    @property
    def n_utterances(self) -> int:
        return self.n_states + self.n_actions

    @property
    def n_turns(self) -> int:
        """Complete real exchanges (excludes padding and the final state)."""
        return self.orig_len // 2

    def validate(self) -> None:
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError(f"episode {self.id}: states/actions must be 2-D arrays")
        if self.n_states != self.n_actions + 1:
            raise ValueError(f"episode {self.id}: {self.n_states} states vs "
                             f"{self.n_actions} actions; need |S| = |A| + 1")
        if self.actions.shape[1] != self.states.shape[1]:
            raise ValueError(f"episode {self.id}: state dim {self.states.shape[1]} "
                             f"!= action dim {self.actions.shape[1]}")
        if not np.isfinite(self.states).all() or not np.isfinite(self.actions).all():
            raise ValueError(f"episode {self.id}: non-finite embedding")
        if not np.isfinite(self.outcome) or self.outcome < 0:
            raise ValueError(f"episode {self.id}: outcome must be finite and >= 0")
        if self.source not in _SOURCES:
            raise ValueError(f"episode {self.id}: unknown source {self.source!r}")
        if self.traits is not None and self.traits.shape != (TRAIT_DIM,):
            raise ValueError(f"episode {self.id}: traits shape {self.traits.shape}")
        if self.noises is not None and self.noises.shape != self.states.shape:
            raise ValueError(f"episode {self.id}: noises shape {self.noises.shape} "
                             f"!= states shape {self.states.shape}")

    def equals(self, other: "Episode") -> bool:
        def _arr_eq(a, b):
            if a is None or b is None:
                return (a is None) == (b is None)
            return a.shape == b.shape and np.array_equal(a, b)
        return (self.id == other.id and self.outcome == other.outcome
                and self.source == other.source and self.orig_len == other.orig_len
                and self.db_index == other.db_index
                and _arr_eq(self.states, other.states)
                and _arr_eq(self.actions, other.actions)
                and _arr_eq(self.traits, other.traits)
                and _arr_eq(self.noises, other.noises))


@dataclass
class TurnWindow:
    """w consecutive exchanges flattened to 2w utterance rows plus the target."""
    vectors: np.ndarray           # (2w, d): s_k, a_k, s_{k+1}, a_{k+1}, ...
    target: np.ndarray            # (5,)
    episode_id: str = ""
    start_turn: int = 0

    @property
    def window_size(self) -> int:
        return self.vectors.shape[0] // 2


def structure_counts(T: int) -> tuple[int, int]:
    """(n_states, n_actions) for a T-utterance budget; always ends in a state."""
    n_states = (T + 1) // 2
    return n_states, n_states - 1


def pad_episodes(episodes: list[Episode], T: int) -> list[Episode]:
    """Append zero-vector utterances up to the T budget; original length kept."""
    n_states, n_actions = structure_counts(T)
    out = []
    for ep in episodes:
        if ep.n_states > n_states or ep.n_actions > n_actions:
            raise ValueError(f"episode {ep.id}: length {ep.n_utterances} exceeds budget {T}")
        if ep.n_states == n_states:
            out.append(ep)
            continue
        pad_s = np.zeros((n_states - ep.n_states, ep.d))
        pad_a = np.zeros((n_actions - ep.n_actions, ep.d))
        noises = ep.noises
        if noises is not None:
            noises = np.concatenate([noises, np.zeros_like(pad_s)])
        out.append(replace(ep,
                           states=np.concatenate([ep.states, pad_s]),
                           actions=np.concatenate([ep.actions, pad_a]),
                           noises=noises,
                           orig_len=ep.orig_len))
    return out


def filter_by_outcome(episodes: list[Episode], max_outcome: float) -> list[Episode]:
    if max_outcome <= 0:
        raise ValueError("max_outcome must be positive")
    kept = [ep for ep in episodes if ep.outcome <= max_outcome]
    if episodes and not kept:
        warnings.warn(f"outcome filter {max_outcome} removed every episode")
    return kept


def window_turns(episodes: list[Episode], w: int) -> list[TurnWindow]:
    """Sliding windows of w exchanges, stride one turn, never crossing episodes."""
    if w < 1:
        raise ValueError("window size must be >= 1")
    windows = []
    for ep in episodes:
        if ep.traits is None:
            raise ValueError(f"episode {ep.id}: no trait target; "
                             "windowing is for supervised trait training")
        for k in range(ep.n_turns - w + 1):
            rows = np.empty((2 * w, ep.d))
            for j in range(w):
                rows[2 * j] = ep.states[k + j]
                rows[2 * j + 1] = ep.actions[k + j]
            windows.append(TurnWindow(rows, ep.traits.copy(), ep.id, k))
    return windows


def split(episodes: list[Episode], ratio: float, seed: int) -> tuple[list[Episode], list[Episode]]:
    if not 0 < ratio < 1:
        raise ValueError("split ratio must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(episodes))
    n_train = int(len(episodes) * ratio)
    train = [episodes[i] for i in order[:n_train]]
    test = [episodes[i] for i in order[n_train:]]
    return train, test


# -- persistence -----------------------------------------------------------


def _vec_list(arr: np.ndarray | None):
    return None if arr is None else [[float(v) for v in row] for row in arr]


def save_episodes(episodes: list[Episode], path, d: int, T: int) -> None:
    header = {"schema_version": SCHEMA_VERSION, "kind": "episodes", "d": int(d), "T": int(T)}
    with open(path, "w", encoding="ascii") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for ep in episodes:
            if ep.d != d:
                raise ValueError(f"episode {ep.id}: dimension {ep.d} != header d={d}")
            rec = {
                "id": ep.id,
                "states": _vec_list(ep.states),
                "actions": _vec_list(ep.actions),
                "traits": None if ep.traits is None else [float(v) for v in ep.traits],
                "outcome": float(ep.outcome),
                "source": ep.source,
                "orig_len": int(ep.orig_len),
                "noises": _vec_list(ep.noises),
                "db_index": ep.db_index,
            }
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=False) + "\n")


def load_episodes(path) -> tuple[list[Episode], dict]:
    """Returns (episodes, header). Errors name the offending record index."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: bad header: {exc}") from None
    if header.get("kind") != "episodes":
        raise ValueError(f"{path}: not an episodes file")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: schema_version {header.get('schema_version')} "
                         f"unsupported (want {SCHEMA_VERSION})")
    d = int(header["d"])
    episodes = []
    for idx, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            ep = Episode(
                id=rec["id"],
                states=np.array(rec["states"], dtype=np.float64),
                actions=np.array(rec["actions"], dtype=np.float64)
                if rec["actions"] else np.zeros((0, d)),
                traits=None if rec.get("traits") is None else np.array(rec["traits"]),
                outcome=rec["outcome"],
                source=rec["source"],
                orig_len=rec["orig_len"],
                noises=None if rec.get("noises") is None else np.array(rec["noises"]),
                db_index=rec.get("db_index"),
            )
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: record {idx}: {exc}") from None
        if ep.d != d:
            raise ValueError(f"{path}: record {idx}: dimension {ep.d} != header d={d}")
        episodes.append(ep)
    return episodes, header
