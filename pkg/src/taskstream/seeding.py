"""Stable seed derivation for independent random streams."""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Collapse a tuple of printable parts into a stable 63-bit seed.

    The derivation is sha256-based so it is identical across processes,
    platforms, and worker counts; every (direction, distance, task, rep)
    stream gets its own seed and the overall run stays order-independent.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
