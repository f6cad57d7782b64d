"""Stable hashing helpers.

Python's builtin hash() is salted per process; everything that must be
reproducible across runs (feature hashing, dedup, splits) goes through
these instead.
"""

import hashlib


def stable64(text: str) -> int:
    """Deterministic unsigned 64-bit hash of a string."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stable_digest(data: bytes) -> str:
    """Hex sha256 of raw bytes, for file fingerprints and config hashes."""
    return hashlib.sha256(data).hexdigest()
