"""Deterministic seed derivation.

Every random draw in the repository flows from one root seed, split by
purpose, so any experiment is replayable from its manifest alone.  Normal
variates come from numpy's PCG64 generator (ziggurat algorithm), fixed
repo-wide.
"""

import numpy as np

# stable purpose codes; never renumber
PURPOSES = {
    "data_train": 0,
    "data_val": 1,
    "data_test": 2,
    "model_init": 3,
    "shuffle": 4,
    "noise": 5,
    "sweep": 6,
    "probe": 7,
}


def seed_sequence(root_seed, purpose, *extra):
    """SeedSequence for (root, purpose, extra ints); streams are disjoint."""
    code = PURPOSES[purpose]
    return np.random.SeedSequence((int(root_seed), code) + tuple(int(e) for e in extra))


def generator(root_seed, purpose, *extra):
    """Fresh PCG64 generator for the given purpose stream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, purpose, *extra)))
