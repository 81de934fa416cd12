"""Random streams.

Environments use a counter-based hash: the uniform attached to bond ``x`` is a
pure function of ``(seed, x)``, so a window can be enlarged without redrawing
the bonds it already had. Replica dynamics use numpy's Philox generator keyed
by ``SeedSequence(master_seed, spawn_key=(replica_id,))``.
"""

from __future__ import annotations

import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def bond_uniforms(seed: int, bonds) -> np.ndarray:
    """Uniforms in (0, 1), one per bond index, as a pure function of ``seed``.

    Parameters
    ----------
    seed : int
        Environment seed (reduced modulo 2**64).
    bonds : array_like of int
        Bond indices; negative indices are allowed.
    """
    idx = np.asarray(bonds, dtype=np.int64).view(np.uint64)
    with np.errstate(over="ignore"):
        key = _mix(np.array([seed & _MASK], dtype=np.uint64))[0]
        z = _mix(key + (idx + np.uint64(1)) * _GOLDEN)
    # 53 high bits, offset by half a unit so 0 and 1 are never returned
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def derive_seed(master_seed: int, label: str) -> int:
    """A 63-bit seed derived from ``master_seed`` and a text label."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(zlib.crc32(label.encode()),))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def replica_bitgen(master_seed: int, replica_id: int) -> np.random.Philox:
    """The bit generator owned by one replica."""
    return np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(int(replica_id),)))


def replica_generator(master_seed: int, replica_id: int) -> np.random.Generator:
    return np.random.Generator(replica_bitgen(master_seed, replica_id))
