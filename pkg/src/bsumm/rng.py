"""Seeded counter-based random streams."""

import numpy as np


def make_rng(seed):
    """A Philox-backed generator; ``seed`` may be an int, a list of ints or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence([int(v) for v in seed] if np.ndim(seed) else int(seed))
    return np.random.Generator(np.random.Philox(seed))


def trial_seed(seed, trial):
    """Independent 64-bit seed for trial ``trial`` of a run seeded with ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def categorical(u, cumulative):
    """Inverse-CDF draw: indices ``i`` with ``cumulative[i-1] <= u*total < cumulative[i]``."""
    idx = np.searchsorted(cumulative, np.asarray(u) * cumulative[-1], side="right")
    return np.minimum(idx, cumulative.size - 1)
