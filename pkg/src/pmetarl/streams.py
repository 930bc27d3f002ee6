"""Named child random streams.

Every consumer of randomness asks for a stream by name, e.g.
``child_stream(seed, "explore", task_id, round)``, so adding a new consumer
never shifts the draws seen by an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream indices must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def child_stream(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_word(seed), *map(_word, names)]))


def explore_stream(seed: int, task_id: int, round_: int) -> np.random.Generator:
    return child_stream(seed, "explore", task_id, round_)


def eval_stream(seed: int, task_id: int, round_: int) -> np.random.Generator:
    return child_stream(seed, "eval", task_id, round_)
