"""Seeded randomness helpers.

All stochastic code in the package draws from numpy's Philox counter-based
generator, keyed by 64-bit seeds. Sub-streams (per slice, per training pair,
per evaluation frame) get independent keys by hashing the parent seed together
with integer/string context tags, so any piece of work is reproducible in
isolation.
"""

import hashlib
import struct

import numpy as np


def derive_seed(*parts):
    """Mix integers and strings into a 64-bit sub-seed (blake2b based)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(struct.pack("<cI", b"s", len(raw)))
            h.update(raw)
        else:
            h.update(struct.pack("<cQ", b"i", int(part) & 0xFFFFFFFFFFFFFFFF))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed):
    """Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
