"""Seed fan-out.

Every random draw in the package flows through a named substream derived from
one root seed. Substreams are keyed by a hash of their name path, so adding a
stage or reordering loops never shifts the randomness of unrelated stages.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(root_seed: int, *names: object) -> int:
    """Derive a 64-bit seed for the named substream of ``root_seed``."""
    key = f"{int(root_seed)}|" + "/".join(str(n) for n in names)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, *names: object) -> np.random.Generator:
    """A PCG64 generator for the named substream of ``root_seed``."""
    return np.random.Generator(np.random.PCG64(substream_seed(root_seed, *names)))
