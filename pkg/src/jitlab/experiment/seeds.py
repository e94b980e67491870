"""Named, independent seed streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "test", "init", "shuffle", "noise", "attack", "mislabel", "member")


def derive_seed(seed: int, stream: str) -> int:
    """A 32-bit seed for ``stream`` that is independent of every other stream name."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stream.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def repeat_seed(base_seed: int, repeat: int) -> int:
    return base_seed + repeat
