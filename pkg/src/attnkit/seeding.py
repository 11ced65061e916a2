"""Stable seed derivation so every stage draws from one top-level seed."""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, label: str) -> int:
    """Child seed from (seed, stage label); stable across runs and platforms."""
    digest = hashlib.blake2b(f"{seed}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
