# utils/rng.py
import numpy as np

_SEED_MASK = (1 << 63) - 1


def _sequence(seed, counters):
    return np.random.SeedSequence(
        entropy=int(seed) & _SEED_MASK,
        spawn_key=tuple(int(c) for c in counters),
    )


def derive_rng(seed, *counters):
    """
    Build an independent generator for one unit of work.

    The stream depends only on the master seed and the integer counters
    identifying the work item (replicate, patient, tree, ...), never on the
    order in which workers pick items up. Any subset of the work can therefore
    be regenerated in isolation.

    Args:
        seed (int): Master seed
        *counters (int): Position of the work item in the fan-out

    Returns:
        numpy.random.Generator: PCG64 generator for that work item
    """
    return np.random.default_rng(_sequence(seed, counters))


def derive_seed(seed, *counters):
    """Derive a child seed (63-bit int) from a master seed and counters."""
    state = _sequence(seed, counters).generate_state(1, dtype=np.uint64)[0]
    return int(state) & _SEED_MASK
