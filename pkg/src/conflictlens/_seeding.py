import zlib

import numpy as np


def substream(seed, name):
    """Independent generator for a named component, derived from one user seed."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def subseed(seed, name):
    return int(substream(seed, name).integers(0, 2**31 - 1))
