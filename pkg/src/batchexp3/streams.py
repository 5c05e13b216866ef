"""Named random substreams derived from a single master seed.

Every consumer of randomness gets its own ``numpy.random.Generator`` keyed by
``(stream id, *indices)`` so that results do not depend on call interleaving
between items or modules.
"""
from __future__ import annotations

import numpy as np

SAMPLING = 0
CONTEST = 1
HISTORY = 2
FUZZ = 3


def substream(seed: int, stream: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, key)))
    return np.random.Generator(np.random.PCG64(ss))


def sampling_stream(seed: int, item: int) -> np.random.Generator:
    return substream(seed, SAMPLING, item)


def contest_stream(seed: int, item: int, round_: int) -> np.random.Generator:
    return substream(seed, CONTEST, item, round_)


def encode_state(rng: np.random.Generator) -> str:
    """Serialize the position of a PCG64 generator as a short text token."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported bit generator {st['bit_generator']!r}")
    inner = st["state"]
    return f"PCG64:{inner['state']}:{inner['inc']}:{st['has_uint32']}:{st['uinteger']}"


def decode_state(token: str) -> np.random.Generator:
    name, state, inc, has_uint32, uinteger = token.split(":")
    if name != "PCG64":
        raise ValueError(f"unsupported bit generator {name!r}")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(state), "inc": int(inc)},
        "has_uint32": int(has_uint32),
        "uinteger": int(uinteger),
    }
    return np.random.Generator(bg)
