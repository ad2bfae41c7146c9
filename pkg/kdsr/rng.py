"""
Seeded random streams.

Every stream is a numpy `Generator` over the Philox counter-based bit generator, keyed by
(global seed, purpose, optional sub-keys). Philox output is specified by its algorithm, so a seed
gives the same numbers on every platform.
"""

from enum import Enum
from typing import Any

import numpy as np


class Stream(Enum):
    DATA = 1
    INIT = 2
    SAMPLING = 3
    TEACHER = 4
    EVAL = 5
    CHECK = 6


def make_stream(seed: int, stream: Stream, *extra: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence([seed, stream.value, *extra])
    return np.random.Generator(np.random.Philox(seq))


def get_state(rng: np.random.Generator) -> dict[str, Any]:
    """Bit generator state as plain JSON-compatible values."""
    return _to_plain(rng.bit_generator.state)


def set_state(rng: np.random.Generator, state: dict[str, Any]) -> None:
    restored = dict(state)
    restored["state"] = {k: np.array(v, dtype=np.uint64) for k, v in state["state"].items()}
    restored["buffer"] = np.array(state["buffer"], dtype=np.uint64)
    rng.bit_generator.state = restored


def _to_plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return [int(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    return value
