"""Deterministic seed derivation: one root seed, named sub-streams."""

from __future__ import annotations

import hashlib


def derive_seed(root_seed: int, stream: str, index: int = 0) -> int:
    """Stable 64-bit seed for (root, stream name, index)."""
    msg = f"{root_seed}|{stream}|{index}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little")
