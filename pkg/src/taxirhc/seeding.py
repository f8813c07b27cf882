"""Deterministic seed derivation: one root seed, fixed labels per component."""

import hashlib


def derive_seed(root: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(root)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1
