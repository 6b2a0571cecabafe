"""Counter-based seed derivation.

Every random stream is keyed by (root seed, *counters), so the draws for
e.g. tree 17 of fold 3 do not depend on what ran before it.
"""

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """32-bit child seed for the stream identified by `keys`."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))
