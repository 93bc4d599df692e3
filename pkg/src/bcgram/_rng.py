"""Counter-based seed derivation so parallel work units stay reproducible."""

from __future__ import annotations

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit seed for the work unit identified by ``keys`` under ``seed``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
