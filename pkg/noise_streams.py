"""Counter-based Gaussian streams.

Every random draw in the package is addressed by (seed, domain, counter,
position). A Philox generator is keyed by (seed, domain); the counter selects
the block (usually the step index) and position i*d + j inside the block is
particle i, coordinate j. Blocks are prefix-stable in n, so runs with more
particles share the draws of the smaller runs, and no draw depends on thread
scheduling.
"""

from enum import IntEnum
from typing import Tuple, Union

import numpy as np
from scipy.special import ndtri

_SEED_LIMIT = 1 << 64
_UNIT = 2.0 ** -53


class StreamDomain(IntEnum):
    INIT = 0
    CBO_NOISE = 1
    THETA_MC = 2
    POC = 3
    EULER_FINE = 4
    MEANFIELD = 5


def block_counter(step: int, sub: int = 0) -> int:
    """Counter for sub-block `sub` of step `step`."""
    return (int(step) << 32) | int(sub)


def uniform_block(seed: int, domain: int, counter: int, size: int) -> np.ndarray:
    """size doubles in the open interval (0, 1) for the given stream address."""
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    bit_generator = np.random.Philox(key=seed + (int(domain) << 64), counter=int(counter) << 128)
    raw = bit_generator.random_raw(int(size))
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _UNIT


def gaussian_block(seed: int, domain: int, counter: int, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
    """Standard normal block of the given shape, row-major over the stream."""
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    size = int(np.prod(shape)) if shape else 1
    if size == 0:
        return np.zeros(shape)
    return ndtri(uniform_block(seed, domain, counter, size)).reshape(shape)
