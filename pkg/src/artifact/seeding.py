"""Seed derivation: every random stream is keyed on (base seed, component, index)."""
from __future__ import annotations

import zlib

import numpy as np


def _tag(name: str) -> int:
    return zlib.crc32(name.encode())


def derive_seed(base: int, component: str, index: int = 0) -> int:
    ss = np.random.SeedSequence([int(base) & (2**64 - 1), _tag(component), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(base: int, component: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, component, index))
