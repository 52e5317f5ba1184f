"""Counter-based random streams.

Every random variate is a pure function of ``(master_seed, replicate, node,
salt)``: the master seed and replicate index select a 64-bit stream key, the
node counter identifies a particle by its path from the root, and a salt
separates the lifetime draw from the offspring draw.  No generator state is
carried between draws, so results do not depend on traversal order, chunking
or thread count.

The mixing function is the SplitMix64 finalizer (a bijection on 64-bit words).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_CHILD_SALT = np.uint64(0xD1B54A32D192ED03)
LIFETIME_SALT = np.uint64(0x8CB92BA72F3D8DD7)
OFFSPRING_SALT = np.uint64(0x2545F4914F6CDD1D)
_INV_2_53 = 1.0 / 9007199254740992.0

ROOT_NODE = GOLDEN


@njit(cache=True, nogil=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True, inline="always")
def stream_key(seed, replicate):
    """Key of replicate ``replicate`` under master seed ``seed`` (both uint64)."""
    return mix64(mix64(seed + GOLDEN) ^ mix64((replicate + _ONE) * GOLDEN))


@njit(cache=True, nogil=True, inline="always")
def child_node(node, index):
    return mix64(node + (index + _ONE) * _CHILD_SALT)


@njit(cache=True, nogil=True, inline="always")
def draw_bits(key, node, salt):
    # node counters are already well mixed, one finalizer round suffices
    return mix64(key ^ node ^ salt)


@njit(cache=True, nogil=True, inline="always")
def draw_unit(key, node, salt):
    """Uniform double in [0, 1) with 53 random bits."""
    return float(draw_bits(key, node, salt) >> _S11) * _INV_2_53


@njit(cache=True, nogil=True, inline="always")
def draw_exponential(key, node, salt, inv_rate):
    """Exp(rate) by inversion of a uniform on (0, 1]."""
    u = float((draw_bits(key, node, salt) >> _S11) + _ONE) * _INV_2_53
    return -np.log(u) * inv_rate


def seed_to_u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & MASK64)


def derive_seed(master_seed: int, purpose: str) -> int:
    """Independent master seed for a named sub-experiment."""
    digest = hashlib.blake2b(
        f"{int(master_seed) & MASK64}:{purpose}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class ReplicateSeed:
    """Seed record of a single replicate."""

    master_seed: int
    replicate: int = 0

    def __post_init__(self):
        if self.replicate < 0:
            raise ValueError("replicate index must be nonnegative")

    def key(self) -> np.uint64:
        # numba returns a Python int; keep the uint64 type for the kernels
        return np.uint64(_stream_key_py(seed_to_u64(self.master_seed), np.uint64(self.replicate)))


@njit(cache=True)
def _stream_key_py(seed, replicate):
    return stream_key(seed, replicate)
