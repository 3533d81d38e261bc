"""Seeded random number streams shared by every stochastic component."""

from __future__ import annotations

import numpy as np

# Named generator algorithm, recorded in run manifests. PCG64 streams are
# stable across numpy versions for a fixed SeedSequence, which is what makes
# identical (config, seed) pairs reproduce byte-identical outputs.
RNG_ALGORITHM = "pcg64"

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *salt: int) -> np.random.Generator:
    """Return a generator for the stream identified by ``seed`` and ``salt``.

    Salts keep independently consumed streams (pool init, dropout masks,
    batch shuffles, ...) decoupled, so adding draws to one component never
    perturbs another.
    """
    entropy = [int(seed) & _MASK64] + [int(s) & _MASK64 for s in salt]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *salt: int) -> int:
    """Deterministically mix a child seed for a component that seeds itself."""
    entropy = [int(seed) & _MASK64] + [int(s) & _MASK64 for s in salt]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
