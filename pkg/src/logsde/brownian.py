"""Brownian paths on dyadic grids ``{k 2**-n}`` with bridge refinement."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .rng import TAG_BRIDGE, TAG_INCREMENT, RngStream, fill_normals

MAX_LEVEL = 30
_HEADER = struct.Struct("<qqq")


def grid_size(T: float, n: int) -> int:
    """Number of steps ``T * 2**n``; rejects horizons off the level-n grid."""
    n = int(n)
    if not 0 <= n <= MAX_LEVEL:
        raise ValueError(f"level n={n} outside [0, {MAX_LEVEL}]")
    K = float(T) * 2.0**n
    if not (K > 0 and K.is_integer()):
        raise ValueError(f"T={T} is not a positive multiple of 2**-{n}")
    return int(K)


@numba.njit(cache=True, nogil=True)
def _cumulate(incr, out):
    # sequential sum; the streaming kernels accumulate in the same order
    m = incr.shape[1]
    for c in range(m):
        out[0, c] = 0.0
    for k in range(incr.shape[0]):
        for c in range(m):
            out[k + 1, c] = out[k, c] + incr[k, c]


@dataclass(frozen=True, eq=False)
class DyadicBrownianPath:
    """Values of an m-dimensional Brownian motion at times ``k 2**-level``.

    Attributes
    ----------
    level : int
    T : float
    dim : int
    values : ndarray of shape (T * 2**level + 1, dim)
        ``values[0]`` is zero.
    seed_lineage : tuple
        ``(master_seed, stream_id, sampled_level)``.
    """

    level: int
    T: float
    dim: int
    values: np.ndarray = field(repr=False)
    seed_lineage: tuple = ()

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dt(self) -> float:
        return 2.0**-self.level

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def increments(self) -> np.ndarray:
        return self.values[1:] - self.values[:-1]

    def restrict(self, level: int) -> "DyadicBrownianPath":
        """Sub-sample onto the coarser grid of ``level`` (no interpolation)."""
        if level > self.level:
            raise ValueError("cannot restrict to a finer level")
        grid_size(self.T, level)
        step = 2 ** (self.level - level)
        return DyadicBrownianPath(level, self.T, self.dim, self.values[::step].copy(), self.seed_lineage)

    def scaled(self, factor: float) -> "DyadicBrownianPath":
        return DyadicBrownianPath(self.level, self.T, self.dim, self.values * factor, self.seed_lineage)


def sample_path(rng: RngStream, T: float, n: int, m: int = 1) -> DyadicBrownianPath:
    """Sample W on the level-n grid over ``[0, T]``.

    Increments are i.i.d. ``N(0, 2**-n)`` per component, Box-Muller normals
    drawn from the increment sub-stream of ``rng`` at level ``n``; draw
    ``k*m + c`` feeds component ``c`` of increment ``k``.
    """
    K = grid_size(T, n)
    if m < 1:
        raise ValueError("noise dimension m must be >= 1")
    z = rng.normals(TAG_INCREMENT, n, 0, K * m).reshape(K, m)
    z *= np.sqrt(2.0**-n)
    values = np.empty((K + 1, m))
    _cumulate(z, values)
    return DyadicBrownianPath(n, float(T), m, values, (rng.master_seed, rng.stream_id, n))


def bridge_midpoints(path: DyadicBrownianPath, rng: RngStream, intervals=None) -> np.ndarray:
    """Brownian-bridge midpoints for the given coarse intervals.

    The midpoint of interval ``i`` is ``(W_i + W_{i+1}) / 2 + xi`` with
    ``xi ~ N(0, 2**-(n+2) I_m)``, drawn at address ``i*m + c`` of the bridge
    sub-stream for the coarse level, so the result does not depend on which
    intervals are requested or in what order.
    """
    n, m, K = path.level, path.dim, path.n_steps
    idx = np.arange(K) if intervals is None else np.asarray(intervals, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise IndexError("interval index out of range")
    base = np.uint64(rng.base(TAG_BRIDGE, n))
    sd = np.sqrt(2.0 ** -(n + 2))
    if intervals is None:
        z = np.empty(K * m)
        fill_normals(base, 0, z)
        z = z.reshape(K, m)
    else:
        z = np.empty((idx.size, m))
        for r, i in enumerate(idx):
            fill_normals(base, int(i) * m, z[r])
    v = path.values
    return 0.5 * (v[idx] + v[idx + 1]) + sd * z


def refine(path: DyadicBrownianPath, rng: RngStream) -> DyadicBrownianPath:
    """Return the level ``n+1`` path; level-n values are copied bitwise."""
    if path.level + 1 > MAX_LEVEL:
        raise ValueError(f"refinement beyond level {MAX_LEVEL}")
    K = path.n_steps
    out = np.empty((2 * K + 1, path.dim))
    out[::2] = path.values
    out[1::2] = bridge_midpoints(path, rng)
    return DyadicBrownianPath(path.level + 1, path.T, path.dim, out, path.seed_lineage)


def refine_to(path: DyadicBrownianPath, rng: RngStream, level: int) -> DyadicBrownianPath:
    while path.level < level:
        path = refine(path, rng)
    return path


def increment(path: DyadicBrownianPath, k: int) -> np.ndarray:
    if not 0 <= k < path.n_steps:
        raise IndexError(f"increment index {k} outside [0, {path.n_steps})")
    return path.values[k + 1] - path.values[k]


def value_at(path: DyadicBrownianPath, k: int) -> np.ndarray:
    if not 0 <= k <= path.n_steps:
        raise IndexError(f"grid index {k} outside [0, {path.n_steps}]")
    return path.values[k]


def dump_path(path: DyadicBrownianPath, file) -> None:
    """Little-endian dump: int64 header ``(n, T*2**n, m)`` then float64 rows."""
    with open(file, "wb") as fh:
        fh.write(_HEADER.pack(path.level, path.n_steps, path.dim))
        fh.write(np.ascontiguousarray(path.values, dtype="<f8").tobytes())


def load_path(file) -> DyadicBrownianPath:
    data = Path(file).read_bytes()
    n, K, m = _HEADER.unpack_from(data)
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(K + 1, m).copy()
    return DyadicBrownianPath(n, K * 2.0**-n, m, values, ())
