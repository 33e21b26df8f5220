"""
This module derives independent random streams from one master seed.
A stream is identified by its keys (replication number, resample number, ...),
so the numbers a worker sees do not depend on the order work is scheduled in.
"""

import zlib

import numpy as np


def _key(value):
    if isinstance(value, str):
        # stable across interpreter runs, unlike hash()
        return zlib.crc32(value.encode("utf-8"))
    return int(value)


def substream(master_seed, *keys) -> np.random.Generator:
    """
    Return a generator seeded from (master_seed, *keys).
    """
    entropy = [_key(master_seed), *(_key(key) for key in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def substream_seed(master_seed, *keys) -> int:
    """
    Return a 32-bit integer seed for libraries that only take integers (scikit-learn).
    """
    entropy = [_key(master_seed), *(_key(key) for key in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
