"""Stable seeded hashing.

Python's builtin ``hash`` is salted per process, so every place that needs a
reproducible hash (feature hashing, seed derivation) goes through blake2b
here instead.
"""

from __future__ import annotations

import hashlib

_MASK_63 = (1 << 63) - 1


def stable_hash(text: str, seed: int, namespace: str = "") -> int:
    """Return a non-negative 63-bit integer hash, stable across runs and platforms."""
    payload = f"{seed}:{namespace}:{text}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little") & _MASK_63


def hash_index(text: str, seed: int, size: int, namespace: str = "") -> int:
    """Hash ``text`` into a bucket in ``[0, size)``."""
    return stable_hash(text, seed, namespace) % size


def derive_seed(master: int, purpose: str) -> int:
    """Derive an independent child seed from a master seed and a purpose tag."""
    return stable_hash(purpose, master, "seed")
