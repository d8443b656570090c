"""Utterance encoders producing fixed-width embedding vectors.

Every encoder pools token vectors by their mean, so a turn's embedding
is the average of its token embeddings.  The encoder's name and version
go into the export manifest; two exports with the same pinned encoder
are byte-identical.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9']+")


@runtime_checkable
class Encoder(Protocol):
    name: str
    version: str
    dim: int

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


class HashedBagEncoder:
    """Deterministic bag-of-tokens encoder with hash-derived token vectors.

    Each lowercase token maps to a fixed pseudo-random vector expanded from
    its SHA-256 digest in counter mode, so the embedding of a text is fully
    determined by its token multiset.  No model weights, no downloads: this
    is the offline stand-in for a pretrained sentence encoder, and the
    manifest records it as such.  Texts without tokens embed to zero.
    """

    name = "hashed-bag"
    version = "1"

    def __init__(self, dim: int = 768):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    @lru_cache(maxsize=65536)
    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        blocks = []
        for counter in range((2 * self.dim + 31) // 32):
            blocks.append(hashlib.sha256(digest + counter.to_bytes(4, "big")).digest())
        raw = np.frombuffer(b"".join(blocks)[: 2 * self.dim], dtype=">u2")
        vec = raw.astype(np.float64) / 32768.0 - 1.0       # [-1, 1)
        vec.flags.writeable = False
        return vec

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            if tokens:
                out[i] = np.mean([self._token_vector(t) for t in tokens], axis=0)
        return out


class TransformersEncoder:
    """Mean-pooled final-layer token vectors from a local transformers model.

    Requires the `transformers` package and locally available weights; the
    constructor never downloads.  Padding tokens are masked out of the mean.
    """

    def __init__(self, model_dir: str, batch_size: int = 16):
        import torch                                   # noqa: F401
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(model_dir, local_files_only=True)
        self.model = AutoModel.from_pretrained(model_dir, local_files_only=True)
        self.model.eval()
        self.name = self.model.config.model_type
        self.version = str(getattr(self.model.config, "_name_or_path", model_dir))
        self.dim = int(self.model.config.hidden_size)
        self.batch_size = batch_size

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        import torch

        rows = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = [t if t.strip() else " " for t in texts[start:start + self.batch_size]]
                enc = self.tokenizer(batch, padding=True, truncation=True, return_tensors="pt")
                hidden = self.model(**enc).last_hidden_state
                mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
                rows.append(pooled.cpu().numpy().astype(np.float64))
        return np.concatenate(rows) if rows else np.zeros((0, self.dim))
