from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

Purpose = Union[str, int]


def stream_seed(seed: int, *purpose: Purpose) -> int:
    """Derive a 64-bit seed for one named purpose from the run seed."""
    label = "/".join(str(part) for part in purpose).encode("utf-8")
    digest = hashlib.blake2b(label, digest_size=8, key=str(int(seed)).encode("utf-8")).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *purpose: Purpose) -> np.random.Generator:
    """Independent generator for ``purpose``, e.g. ``stream(7, "sample", 2, "epoch", 5)``."""
    return np.random.default_rng(stream_seed(seed, *purpose))
