"""Corpus-to-episode export.

Role mapping: every persuadee (EE) turn becomes a state vector, every
persuader (ER) turn an action vector.  An episode is the alternating
sequence s_0, a_0, s_1, ..., s_n, so it must start and end on a state;
persuader turns before the first persuadee turn or after the last one
carry no transition and are dropped.  Dialogues longer than the
utterance budget T are truncated to it; `orig_len` records how many
vectors are real, which is the same bookkeeping the consumer uses for
zero-padded episodes.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CorpusRecord, read_corpus
from .encoders import Encoder, HashedBagEncoder

logger = logging.getLogger("pfg_ingest")

SCHEMA_VERSION = 1
POOLING = "mean over token vectors"


@dataclass
class ExportStats:
    n_dialogues: int = 0          # dialogues present in the corpus
    n_exported: int = 0
    n_filtered: int = 0           # donation above the cutoff
    skipped: list[tuple[str, str]] = field(default_factory=list)


def trim_to_episode(turns: list[tuple[str, str]]) -> tuple[list[str], list[str]]:
    """(state texts, action texts) with the leading/trailing ER turns dropped."""
    roles = [r for r, _ in turns]
    first = roles.index("EE")
    last = len(roles) - 1 - roles[::-1].index("EE")
    kept = turns[first:last + 1]
    states = [text for role, text in kept if role == "EE"]
    actions = [text for role, text in kept if role == "ER"]
    if len(states) != len(actions) + 1:
        raise ValueError(f"turns do not alternate: {roles}")
    return states, actions


def write_episode_file(path, episodes: list[dict], d: int, T: int) -> None:
    """Write the shared episode format: a self-describing JSON-lines file.

    Byte-compatible with the consumer's loader: one header line with the
    schema version, then one record per episode with keys sorted.
    """
    header = {"schema_version": SCHEMA_VERSION, "kind": "episodes", "d": int(d), "T": int(T)}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for ep in episodes:
            if len(ep["states"][0]) != d:
                raise ValueError(f"episode {ep['id']}: dimension {len(ep['states'][0])} != {d}")
            fh.write(json.dumps(ep, sort_keys=True, allow_nan=False) + "\n")
    os.replace(tmp, path)


def _vec_list(arr: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in arr]


def record_to_episode(rec: CorpusRecord, encoder: Encoder, T: int) -> dict:
    states, actions = trim_to_episode(rec.turns)
    max_states = (T + 1) // 2
    n_states = min(len(states), max_states)
    states, actions = states[:n_states], actions[:n_states - 1]
    S = encoder.encode(states)
    A = encoder.encode(actions) if actions else np.zeros((0, encoder.dim))
    return {
        "id": rec.dialogue_id,
        "states": _vec_list(S),
        "actions": _vec_list(A),
        "traits": [float(v) for v in rec.traits],
        "outcome": float(rec.donation),
        "source": "corpus",
        "orig_len": len(states) + len(actions),
        "noises": None,
        "db_index": None,
    }


def export_corpus(corpus_dir, out_path, *, encoder: Encoder | None = None,
                  max_donation: float = 20.0, T: int = 25) -> ExportStats:
    """Convert every fully annotated dialogue with donation <= max_donation.

    Writes the episode file atomically plus a `<out>.manifest.json` sidecar
    recording the encoder name/version and the pooling choice.  Returns the
    per-dialogue accounting; each skipped dialogue is logged with its reason.
    """
    if encoder is None:
        encoder = HashedBagEncoder()
    records, skipped = read_corpus(corpus_dir)
    stats = ExportStats(n_dialogues=len(records) + len(skipped), skipped=list(skipped))
    for cid, reason in skipped:
        logger.warning("skipping %s: %s", cid, reason)

    episodes = []
    for rec in records:
        if rec.donation > max_donation:
            stats.n_filtered += 1
            continue
        episodes.append(record_to_episode(rec, encoder, T))
    stats.n_exported = len(episodes)

    out_path = Path(out_path)
    write_episode_file(out_path, episodes, d=encoder.dim, T=T)
    manifest = {
        "encoder": {"name": encoder.name, "version": encoder.version, "dim": encoder.dim},
        "pooling": POOLING,
        "max_donation": max_donation,
        "T": T,
        "n_dialogues": stats.n_dialogues,
        "n_exported": stats.n_exported,
        "n_filtered": stats.n_filtered,
        "skipped": [{"id": cid, "reason": reason} for cid, reason in stats.skipped],
    }
    tmp = out_path.with_name(out_path.name + ".manifest.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="ascii")
    os.replace(tmp, out_path.with_name(out_path.name + ".manifest.json"))
    logger.info("exported %d/%d dialogues (%d filtered, %d skipped) -> %s",
                stats.n_exported, stats.n_dialogues, stats.n_filtered,
                len(stats.skipped), out_path)
    return stats
