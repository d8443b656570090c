"""Reader for the ConvoKit-style on-disk layout of the corpus.

Expected directory contents:

    utterances.jsonl    one JSON object per line: id, conversation_id,
                        speaker, text, meta.role; file order gives the
                        utterance order within a conversation
    conversations.json  conversation id -> metadata (donation, traits)
    speakers.json       optional speaker id -> metadata (trait fallback)

Metadata dicts may carry their payload directly or nested under a
"meta" key; both forms are accepted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Big-Five scores in OCEAN order; every alias seen across corpus
# distributions maps onto one slot.
_TRAIT_ALIASES = (
    ("open", "openness"),
    ("conscientious", "conscientiousness"),
    ("extrovert", "extroversion", "extraversion"),
    ("agreeable", "agreeableness"),
    ("neurotic", "neuroticism"),
)
_TRAIT_VECTOR_KEYS = ("traits", "big_five", "ocean")
_DONATION_KEYS = ("donation", "donation_ee", "intended_donation", "amount_donated")

# The corpus codes roles either as strings or as 0 (persuader) / 1 (persuadee).
_ROLE_MAP = {
    "ee": "EE", "persuadee": "EE", "1": "EE",
    "er": "ER", "persuader": "ER", "0": "ER",
}


@dataclass
class CorpusRecord:
    """One dialogue with alternating speaker turns and its annotations.

    Consecutive utterances by the same role are already concatenated into
    a single turn, so ``turns`` strictly alternates between EE and ER.
    """
    dialogue_id: str
    turns: list[tuple[str, str]] = field(default_factory=list)  # (role, text)
    traits: np.ndarray | None = None                            # (5,) OCEAN
    donation: float | None = None


def _meta(obj) -> dict:
    if isinstance(obj, dict) and isinstance(obj.get("meta"), dict):
        return obj["meta"]
    return obj if isinstance(obj, dict) else {}


def normalize_role(value) -> str | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)) and float(value) in (0.0, 1.0):
        value = str(int(value))
    if isinstance(value, str):
        return _ROLE_MAP.get(value.strip().lower())
    return None


def extract_traits(meta: dict) -> np.ndarray | None:
    for key in _TRAIT_VECTOR_KEYS:
        if key in meta and meta[key] is not None:
            vec = np.asarray(meta[key], dtype=np.float64)
            return vec if vec.shape == (5,) and np.isfinite(vec).all() else None
    values = []
    for aliases in _TRAIT_ALIASES:
        hit = next((meta[a] for a in aliases if meta.get(a) is not None), None)
        if hit is None:
            return None
        values.append(float(hit))
    vec = np.array(values)
    return vec if np.isfinite(vec).all() else None


def extract_donation(meta: dict) -> float | None:
    for key in _DONATION_KEYS:
        if meta.get(key) is not None:
            try:
                amount = float(meta[key])
            except (TypeError, ValueError):
                return None
            return amount if np.isfinite(amount) and amount >= 0 else None
    return None


def _merge_turns(utterances: list[tuple[str, str]]) -> list[tuple[str, str]]:
    """Concatenate consecutive same-role utterances into one speaker turn."""
    turns: list[tuple[str, str]] = []
    for role, text in utterances:
        text = text.strip()
        if turns and turns[-1][0] == role:
            prev_role, prev_text = turns[-1]
            turns[-1] = (prev_role, f"{prev_text} {text}".strip())
        else:
            turns.append((role, text))
    return turns


def read_corpus(corpus_dir) -> tuple[list[CorpusRecord], list[tuple[str, str]]]:
    """Returns (records sorted by dialogue id, skipped (id, reason) pairs).

    A dialogue is skipped, never patched, when any annotation the episode
    format requires is missing: an unknown role code, no persuadee turn,
    no trait vector, or no donation amount.
    """
    corpus_dir = Path(corpus_dir)
    utt_path = corpus_dir / "utterances.jsonl"
    conv_path = corpus_dir / "conversations.json"
    if not utt_path.is_file() or not conv_path.is_file():
        raise FileNotFoundError(f"{corpus_dir}: need utterances.jsonl and conversations.json")

    conversations = json.loads(conv_path.read_text(encoding="utf-8"))
    speakers = {}
    spk_path = corpus_dir / "speakers.json"
    if spk_path.is_file():
        speakers = json.loads(spk_path.read_text(encoding="utf-8"))

    by_conv: dict[str, list[dict]] = {}
    with open(utt_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                utt = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{utt_path}: line {line_no}: {exc}") from None
            by_conv.setdefault(str(utt["conversation_id"]), []).append(utt)

    records, skipped = [], []
    for cid in sorted(by_conv):
        utts = by_conv[cid]
        meta = _meta(conversations.get(cid, {}))

        pairs, bad_role = [], None
        for utt in utts:
            role = normalize_role(_meta(utt).get("role", utt.get("role")))
            if role is None:
                bad_role = _meta(utt).get("role", utt.get("role"))
                break
            pairs.append((role, str(utt.get("text") or "")))
        if bad_role is not None:
            skipped.append((cid, f"unknown role code {bad_role!r}"))
            continue

        turns = _merge_turns(pairs)
        if not any(role == "EE" for role, _ in turns):
            skipped.append((cid, "no persuadee utterances"))
            continue

        traits = extract_traits(meta)
        if traits is None:
            # fall back to the persuadee speaker's own metadata
            ee_speakers = {str(u.get("speaker")) for (r, _), u in zip(pairs, utts) if r == "EE"}
            for sid in sorted(ee_speakers):
                traits = extract_traits(_meta(speakers.get(sid, {})))
                if traits is not None:
                    break
        if traits is None:
            skipped.append((cid, "missing trait annotation"))
            continue

        donation = extract_donation(meta)
        if donation is None:
            skipped.append((cid, "missing donation amount"))
            continue

        records.append(CorpusRecord(cid, turns, traits, donation))
    return records, skipped
