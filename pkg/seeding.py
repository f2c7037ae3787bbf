from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """
    Return an independent generator for the named component.

    The stream depends only on (seed, name, keys), so adding draws to one
    component never shifts the numbers another component sees.
    """
    spawn_key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))
