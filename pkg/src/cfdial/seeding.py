"""Deterministic seed derivation.

Every stage and sub-task hashes (master seed, label) so that changing one
stage's label or running stages out of order never shifts another stage's
randomness.
"""

from __future__ import annotations

import hashlib


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
