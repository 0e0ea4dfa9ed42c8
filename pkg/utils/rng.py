"""Seed derivation and the single random generator every stream uses.

All randomness comes from numpy's Philox4x64-10 counter-based bit generator,
keyed through ``SeedSequence``; output is identical across platforms. Each
field gets its own stream, keyed by ``derive_field_seed(master_seed, name)``.
"""

import numpy as np

SEED_MASK = 2**64 - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_SEPARATOR = b"\x1f"


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & SEED_MASK
    return h


def derive_field_seed(master_seed: int, field_name: str) -> int:
    """FNV-1a 64 over le64(master_seed) + 0x1F + utf8(field_name)"""
    payload = (master_seed & SEED_MASK).to_bytes(8, "little") + _SEPARATOR + field_name.encode("utf-8")
    return fnv1a_64(payload)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed & SEED_MASK))
