from __future__ import annotations

from hashlib import sha256

import numpy as np


def derive_seed(base: int, *labels: object, bits: int = 63) -> int:
    """Deterministic sub-seed: sha256(base | labels) -> {0,...,2^bits - 1}.

    Every random stream in the project (parameter init, scene layout,
    sequence sampling) is keyed this way so that runs are reproducible and
    independent streams never share state.
    """
    h = sha256(str(int(base)).encode("utf-8"))
    for label in labels:
        h.update(b"|")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "big") % (2**bits)


def make_rng(base: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *labels))


def digest_bytes(payload: bytes) -> str:
    return sha256(payload).hexdigest()
