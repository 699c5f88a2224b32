"""Named deterministic random streams.

Every source of randomness in the pipeline draws from a counter-based
generator keyed by (seed, *scope names), so independent stages never share
or perturb each other's streams and no global RNG state exists.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, *scope: object) -> np.random.Generator:
    """Return a Philox generator for the given seed and scope labels.

    Identical (seed, scope) always yields the same stream; any change to
    either yields a statistically independent one.
    """
    tag = "/".join(str(part) for part in scope)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.Generator(np.random.Philox(seq))
