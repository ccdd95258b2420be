"""Named random substreams derived from one integer seed."""

import zlib

import numpy as np


def substream(seed, name):
    """Generator for ``name`` (e.g. ``"synth/noise"``), independent of other names."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def subseed(seed, name):
    return int(substream(seed, name).integers(2**31 - 1))
