"""Named, reproducible random substreams derived from one root seed."""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def substream(seed, *keys):
    """Return a Generator for the substream ``(seed, *keys)``.

    String keys are hashed with CRC32 so that names such as ``"stage1"``
    map to stable integers across platforms and Python versions.
    """
    if seed is None:
        seed = np.random.SeedSequence().entropy
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
