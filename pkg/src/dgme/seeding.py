"""Deterministic sub-seed derivation.

Every random draw in the package comes from a generator built by
``derive_rng(master, *keys)``.  The keys are small integers naming the
purpose of the stream (see the ``STREAM_*`` constants) followed by indices
such as member, round or fold.  Because each stream is a pure function of
``(master, keys)``, training members or folds in any order, serially or in
parallel, yields the same numbers.
"""

import numpy as np

STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_DROPOUT = 3
STREAM_FOLDS = 4
STREAM_SAMPLE = 5
STREAM_TOY = 6
STREAM_MC = 7
STREAM_VALID = 8
STREAM_RESTART = 9


def derive_seed(master, *keys):
    """Return a 63-bit integer seed for the stream ``(master, *keys)``."""
    seq = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(seq.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(master, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]]))
