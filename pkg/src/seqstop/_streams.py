"""Deterministic random-stream derivation.

Every generator used by a run is a Philox (counter-based) stream derived
from ``(seed, tag, ...)`` through :class:`numpy.random.SeedSequence`.  Stages
that two drivers share (pilot simulation, out-of-sample valuation) therefore
consume identical random numbers for the same seed, no matter what happens
in the stages they do not share, and results are bit-reproducible
independent of any parallelism across replications.
"""

import numpy as np

# Substream tags. Fixed constants are part of the reproducibility contract:
# changing them changes every seeded result.
PILOT = 1        # forward pilot trajectories from the initial state
RESPONSES = 2    # timing-value response simulation at one backward step
CANDIDATES = 3   # LHS candidate generation and batch selection
ROUGH_FIT = 4    # tree moves of the rough (active-learning) fit
FINAL_FIT = 5    # tree moves of the final fit
VALUATION = 6    # out-of-sample valuation paths


def substream(seed, *tags):
    """Return the Philox generator for the named substream of ``seed``."""
    key = np.random.SeedSequence([int(seed), *[int(t) for t in tags]])
    return np.random.Generator(np.random.Philox(key))


def replication_seed(master, k):
    """Derive the 64-bit run seed of replication ``k`` from a master seed.

    Documented derivation: the first two 32-bit words of
    ``SeedSequence([master, k])`` packed big-endian into one integer.
    """
    hi, lo = np.random.SeedSequence([int(master), int(k)]).generate_state(2)
    return (int(hi) << 32) | int(lo)
