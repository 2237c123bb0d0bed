"""Seed derivation.

Every random stream is a PCG64 generator seeded from
``SeedSequence(base_seed, spawn_key=(purpose, *counters))``.  The spawn key
acts as a counter, so stream ``(run, instance)`` can be produced directly
without drawing any other stream first; evaluation order never matters.
"""
from __future__ import annotations

import numpy as np

SAMPLING = 1
TRAINING = 2
INIT = 3
SYNTHETIC = 4


def stream(base_seed: int, purpose: int, *counters: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(base_seed), spawn_key=(int(purpose), *map(int, counters)))
    return np.random.Generator(np.random.PCG64(seq))


def run_seed(base_seed: int, run: int) -> int:
    """A 63-bit integer seed for run ``run``, recorded in reports."""
    seq = np.random.SeedSequence(int(base_seed), spawn_key=(SAMPLING, int(run)))
    return int(seq.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))
