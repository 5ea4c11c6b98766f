"""Counter-based random streams.

Every Gaussian draw has a fixed address ``(stream key, tag, index)`` so any
path, interval or refinement midpoint can be regenerated independently of
the order in which work is scheduled.

The 64-bit mix is the SplitMix64 finalizer::

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

Uniform number ``i`` of a tagged sub-stream with base ``s`` is
``mix64(s + (i + 1) * 0x9E3779B97F4A7C15)`` (the SplitMix64 sequence read at
position ``i``), mapped to ``(0, 1]`` by its top 53 bits.

Normals come in pairs from the polar form of Box-Muller. Pair ``p`` owns
uniforms ``10p .. 10p+9``: up to four candidate points ``(2u-1, 2v-1)`` are
tried in order, and in the rare case all four fall outside the unit disc the
trigonometric form is applied to uniforms ``10p+8, 10p+9``. Draw ``2p`` is the
first member of the pair and draw ``2p + 1`` the second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

TAG_INCREMENT = 0
TAG_BRIDGE = 1
TAG_AUX = 2

_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, nogil=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def substream_base(key, tag, level):
    code = np.uint64(tag) * np.uint64(256) + np.uint64(level)
    return mix64(np.uint64(key) ^ mix64(code + GOLDEN))


@numba.njit(cache=True, nogil=True)
def uniform_at(base, i):
    h = mix64(np.uint64(base) + (np.uint64(i) + np.uint64(1)) * GOLDEN)
    return (float(np.int64(h >> np.uint64(11))) + 1.0) * _INV_2_53


@numba.njit(cache=True, nogil=True)
def normal_pair(base, p):
    c = 10 * p
    for a in range(4):
        u = 2.0 * uniform_at(base, c + 2 * a) - 1.0
        v = 2.0 * uniform_at(base, c + 2 * a + 1) - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            return u * f, v * f
    r = math.sqrt(-2.0 * math.log(uniform_at(base, c + 8)))
    ang = _TWO_PI * uniform_at(base, c + 9)
    return r * math.cos(ang), r * math.sin(ang)


@numba.njit(cache=True, nogil=True)
def normal_at(base, j):
    z0, z1 = normal_pair(base, j // 2)
    return z0 if j % 2 == 0 else z1


@numba.njit(cache=True, nogil=True)
def fill_normals(base, start, out):
    """Fill ``out`` with normals ``start, start+1, ...`` of one sub-stream."""
    n = out.shape[0]
    j = start
    i = 0
    if j % 2 == 1 and n > 0:
        out[0] = normal_at(base, j)
        i = 1
        j += 1
    while i + 1 < n:
        z0, z1 = normal_pair(base, j // 2)
        out[i] = z0
        out[i + 1] = z1
        i += 2
        j += 2
    if i < n:
        out[i] = normal_at(base, j)


def _mix_py(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_id(experiment_id: int, path_index: int) -> int:
    """Mix an experiment id and a path index into a 64-bit stream id."""
    return _mix_py(_mix_py(experiment_id) + (path_index & _MASK) * 0x9E3779B97F4A7C15)


def experiment_id(label: str) -> int:
    """Stable 64-bit id for a string label (FNV-1a then mixed)."""
    h = 0xCBF29CE484222325
    for byte in label.encode():
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return _mix_py(h)


@dataclass(frozen=True)
class RngStream:
    """Address of one reproducible random stream.

    Parameters
    ----------
    master_seed : int
        User-level seed, taken modulo 2**64.
    stream_id : int
        Per-path id, usually from :func:`stream_id`.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & _MASK)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK)

    @property
    def key(self) -> int:
        return _mix_py(self.master_seed ^ _mix_py(self.stream_id + 0x9E3779B97F4A7C15))

    @classmethod
    def for_path(cls, master_seed: int, label: str, path_index: int) -> "RngStream":
        return cls(master_seed, stream_id(experiment_id(label), path_index))

    def base(self, tag: int, level: int) -> int:
        return int(substream_base(np.uint64(self.key), tag, level))

    def normals(self, tag: int, level: int, start: int, count: int) -> np.ndarray:
        out = np.empty(count)
        fill_normals(np.uint64(self.base(tag, level)), start, out)
        return out


def path_keys(master_seed: int, label: str, indices) -> np.ndarray:
    """Stream keys for a batch of path indices, as a uint64 array."""
    exp = experiment_id(label)
    return np.array(
        [RngStream(master_seed, stream_id(exp, int(i))).key for i in indices], dtype=np.uint64
    )
