"""Deterministic RNG derivation.

Every random stream in the package is derived from a master seed plus a
key path, so results do not depend on execution order or thread count.
"""
import numpy as np


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)
