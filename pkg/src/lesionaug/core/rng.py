"""SplitMix64 streams keyed by (seed, sample id, epoch, operation).

Every random draw in the package goes through these helpers so that a run is
a pure function of the master seed. Nothing here touches global entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

OP_TAGS = frozenset({"rotation", "contrast", "zoom", "synth", "dropout", "init", "shuffle"})

_INV_2_53 = 1.0 / (1 << 53)


@dataclass(frozen=True)
class RngState:
    state: int

    def __post_init__(self):
        if not 0 <= self.state <= MASK64:
            raise ValueError(f"RngState must be a 64-bit unsigned integer, got {self.state}")


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix_next(rng: RngState) -> tuple[int, RngState]:
    nxt = (rng.state + GAMMA) & MASK64
    return mix64(nxt), RngState(nxt)


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def derive_stream(master_seed: int, sample_id: str, epoch: int, op_tag: str) -> RngState:
    """Independent stream for one (sample, epoch, operation) triple.

    The key ``"{sample_id}/{epoch}/{op_tag}"`` is FNV-1a hashed and xored with
    the mixed master seed; the result is mixed once more so that nearby seeds
    and keys do not give correlated starting states.
    """
    if op_tag not in OP_TAGS:
        raise ValueError(f"unknown op_tag {op_tag!r}; expected one of {sorted(OP_TAGS)}")
    key = f"{sample_id}/{epoch}/{op_tag}".encode("utf-8")
    seed_mixed = mix64((int(master_seed) + GAMMA) & MASK64)
    return RngState(mix64(seed_mixed ^ fnv1a64(key)))


def uniform(rng: RngState, lo: float, hi: float) -> tuple[float, RngState]:
    if lo > hi:
        raise ValueError(f"uniform: lo={lo} > hi={hi}")
    value, nxt = splitmix_next(rng)
    u = (value >> 11) * _INV_2_53
    return min(lo + (hi - lo) * u, hi), nxt


# -- vectorized block draws --------------------------------------------------
# A block of n draws equals n sequential splitmix_next calls: the k-th state is
# state + k*GAMMA, so it can be computed without a Python loop.

def _block_values(rng: RngState, n: int) -> tuple[np.ndarray, RngState]:
    k = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(rng.state) + k * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        z = z ^ (z >> np.uint64(31))
    return z, RngState((rng.state + n * GAMMA) & MASK64)


def uniform_array(rng: RngState, n: int, lo: float = 0.0, hi: float = 1.0) -> tuple[np.ndarray, RngState]:
    """``n`` draws identical to calling :func:`uniform` ``n`` times."""
    if lo > hi:
        raise ValueError(f"uniform: lo={lo} > hi={hi}")
    z, nxt = _block_values(rng, n)
    u = (z >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return np.minimum(lo + (hi - lo) * u, hi), nxt


def normal_array(rng: RngState, n: int) -> tuple[np.ndarray, RngState]:
    """Standard normal draws by Box-Muller on pairs of uniforms."""
    m = (n + 1) // 2
    u, nxt = uniform_array(rng, 2 * m)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * math.pi * u2), r * np.sin(2 * math.pi * u2)])
    return z[:n], nxt


def truncated_normal(rng: RngState, mean: float, std: float, bound: float = 3.0) -> tuple[float, RngState]:
    """Gaussian draw rejected outside ``mean +- bound*std``."""
    while True:
        z, rng = normal_array(rng, 1)
        if abs(z[0]) <= bound:
            return mean + std * float(z[0]), rng


def permutation(rng: RngState, n: int) -> tuple[list[int], RngState]:
    """Fisher-Yates shuffle of ``range(n)``."""
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        value, rng = splitmix_next(rng)
        j = ((value >> 11) * (i + 1)) >> 53
        order[i], order[j] = order[j], order[i]
    return order, rng
