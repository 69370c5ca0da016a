"""Deterministic RNG streams derived from one master seed.

Every consumer of randomness gets its own named stream so that unrelated
parts of a run (data order per child, controller sampling, replay draws,
baseline noise) never perturb each other. Stream identity is the tag tuple,
hashed stably, so adding a consumer never shifts existing streams.
"""

import zlib

import numpy as np


def stream(master_seed: int, *tags: str | int) -> np.random.Generator:
    """Return the generator for the (master_seed, *tags) stream."""
    entropy = [int(master_seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
