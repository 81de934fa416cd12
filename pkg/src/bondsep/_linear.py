"""Nearest-neighbour symmetric generators on a window and their exponentials.

``Chain`` is the generator ``A`` of a single walker (equivalently, of the
one-point equation) on ``S`` sites: interior bond rates, an optional wrap bond,
and killing rates at the two ends (reservoir channels). ``propagate`` evaluates
``exp(tA) v`` and ``int_0^t exp(sA) v ds`` exactly up to a Poisson tail by
uniformization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

TAIL = 1e-14


@dataclass(frozen=True)
class Chain:
    bonds: np.ndarray          # rates of bonds (i, i+1), length S - 1
    wrap: float = 0.0          # rate of the bond (S-1, 0)
    kill_left: float = 0.0
    kill_right: float = 0.0

    @property
    def size(self) -> int:
        return self.bonds.shape[0] + 1

    def exit_rates(self) -> np.ndarray:
        d = np.zeros(self.size)
        d[:-1] += self.bonds
        d[1:] += self.bonds
        d[0] += self.wrap + self.kill_left
        d[-1] += self.wrap + self.kill_right
        return d

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``A v`` along the first axis of ``v``."""
        r = self.bonds.reshape((-1,) + (1,) * (v.ndim - 1))
        flux = r * (v[1:] - v[:-1])
        out = np.zeros_like(v)
        out[:-1] += flux
        out[1:] -= flux
        if self.wrap:
            fw = self.wrap * (v[0] - v[-1])
            out[-1] += fw
            out[0] -= fw
        if self.kill_left:
            out[0] -= self.kill_left * v[0]
        if self.kill_right:
            out[-1] -= self.kill_right * v[-1]
        return out

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.size))

    def banded(self) -> np.ndarray:
        """Symmetric upper banded form (for solve_banded / eigh_tridiagonal)."""
        if self.wrap:
            raise ValueError("wrap bond breaks the tridiagonal structure")
        ab = np.zeros((2, self.size))
        ab[0, 1:] = self.bonds
        ab[1] = -self.exit_rates()
        return ab

    def steady(self, source: np.ndarray) -> np.ndarray:
        """Solve ``A x = -source`` (needs killing so that ``A`` is invertible)."""
        ab = self.banded()
        full = np.zeros((3, self.size))
        full[0] = ab[0]
        full[1] = ab[1]
        full[2, :-1] = ab[0, 1:]
        return linalg.solve_banded((1, 1), full, -source)


def poisson_window(mu: float, tail: float = TAIL) -> tuple[int, int]:
    if mu <= 0:
        return 0, 0
    lo = int(stats.poisson.ppf(tail, mu))
    hi = int(stats.poisson.isf(tail, mu)) + 1
    return max(lo - 1, 0), hi


def propagate(chain: Chain, v: np.ndarray, times, integrals: bool = False, tail: float = TAIL):
    """Uniformized ``exp(tA) v`` for each ``t`` in ``times``.

    Returns ``(values, integrals_or_None, truncation)`` with ``values`` of
    shape ``(len(times),) + v.shape``. The integral uses
    ``int_0^t e^{sA} ds v = (1/L) sum_m pmf(m; Lt) R_{m-1}`` with
    ``R_k = sum_{i<=k} P^i v`` and ``P = I + A/L``.
    """
    times = np.asarray(times, dtype=float)
    v = np.asarray(v, dtype=float)
    L = float(chain.exit_rates().max())
    out = np.zeros((len(times),) + v.shape)
    ints = np.zeros((len(times),) + v.shape) if integrals else None
    if L == 0.0:
        out[:] = v
        if integrals:
            ints[:] = times.reshape((-1,) + (1,) * v.ndim) * v
        return out, ints, 0.0
    windows = [poisson_window(L * t, tail) for t in times]
    kmax = max(hi for _, hi in windows)
    pmfs = []
    for t, (lo, hi) in zip(times, windows):
        k = np.arange(lo, hi + 1)
        pmfs.append((lo, stats.poisson.pmf(k, L * t) if t > 0 else (k == 0).astype(float)))
    mass = np.array([p.sum() for _, p in pmfs])
    truncation = float(np.max(np.abs(1.0 - mass)))

    # active[k] lists the times whose Poisson window contains k
    starts = np.array([lo for lo, _ in pmfs])
    ends = np.array([lo + len(p) - 1 for lo, p in pmfs])
    p = v.copy()
    running = np.zeros_like(v)  # R_{k-1}
    for k in range(kmax + 1):
        for j in np.nonzero((starts <= k) & (ends >= k))[0]:
            w = pmfs[j][1][k - starts[j]]
            if w:
                out[j] += w * p
                if integrals:
                    ints[j] += w * running
        running += p
        if k < kmax:
            p = p + chain.apply(p) / L
    if integrals:
        ints /= L
    return out, ints, truncation


def spectral(chain: Chain, v: np.ndarray, times, integrals: bool = False):
    """Exact propagation by symmetric eigendecomposition of ``A``."""
    times = np.asarray(times, dtype=float)
    if chain.wrap:
        lam, V = linalg.eigh(chain.dense())
    else:
        ab = chain.banded()
        lam, V = linalg.eigh_tridiagonal(ab[1], ab[0, 1:])
    c = V.T @ v
    out = np.stack([V @ (np.exp(lam * t)[:, None] * c if c.ndim > 1 else np.exp(lam * t) * c) for t in times])
    ints = None
    if integrals:
        rows = []
        for t in times:
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(np.abs(lam * t) > 1e-12, np.expm1(lam * t) / lam, t)
            rows.append(V @ (g[:, None] * c if c.ndim > 1 else g * c))
        ints = np.stack(rows)
    return out, ints
