"""Counter-based seed derivation.

Every random draw in a simulation uses a seed derived from the master seed
through a numpy SeedSequence with spawn key (purpose, round, client), so the
result never depends on the order in which clients happen to execute.
"""
from enum import IntEnum

import numpy as np


class SeedPurpose(IntEnum):
    INIT = 0
    WARMUP = 1
    LOCAL = 2
    EXCHANGE = 3
    DATA = 4


def derive_seed(master_seed, purpose, round_index=0, client_index=0):
    sequence = np.random.SeedSequence(entropy=int(master_seed),
                                      spawn_key=(int(purpose), int(round_index), int(client_index)))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
