"""Per-trial random streams.

Every Monte Carlo trial gets its own generator derived from ``(seed, trial)``
through numpy's ``SeedSequence`` spawn keys, so results never depend on how
trials are batched or scheduled across workers.
"""

import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def trial_rng(seed, trial=0):
    """Generator for trial number ``trial`` under master ``seed``."""
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.PCG64(seq))


def uniform_block(seed, first_trial, count, n_steps):
    """(count, n_steps) array; row i holds the first draws of trial first_trial+i."""
    out = np.empty((count, n_steps))
    for i in range(count):
        out[i] = trial_rng(seed, first_trial + i).random(n_steps)
    return out


def trial_batches(trials, n_steps, budget=4_000_000):
    """Split ``range(trials)`` into (start, count) chunks of bounded memory."""
    size = max(1, min(trials, budget // max(1, n_steps)))
    return [(s, min(size, trials - s)) for s in range(0, trials, size)]
