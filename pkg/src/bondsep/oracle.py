"""Deterministic oracles for small systems and for the single random walk.

* ``master_equation``: the exact law of the exclusion process on ``K <= 12`` sites.
* ``two_point_ode``: the closed equation for the two-point correlation
  ``phi_t(x, y) = E[eta(x) eta(y)] - rho(x) rho(y)``,
  ``d phi/dt = L_2 phi + Gamma`` with ``Gamma = -N^2 xi_x (rho(x+1) - rho(x))^2``
  on adjacent pairs and ``L_2`` the two-particle exclusion generator (killed at
  the reservoir edges).
* ``walk_kernel``, ``liggett_check``, ``hitting_and_coalescence`` and
  ``space_time_correlation`` for the random walk in the bond environment.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, sparse
from scipy.sparse import linalg as splinalg

from ._linear import Chain, propagate
from .environment import Environment
from .functions import Profile, chi
from .pde import chain_of, initial_values, reservoir_densities, solve_discrete
from .rng import replica_generator

MAX_SITES = 12


# --------------------------------------------------------------------------
# master equation


class _SparseGenerator:
    """Forward equation ``dp/dt = Q^T p`` in the interface used by ``propagate``."""

    def __init__(self, Q: sparse.csr_matrix):
        self.QT = Q.T.tocsr()
        self._exit = -Q.diagonal()

    def exit_rates(self) -> np.ndarray:
        return self._exit

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.QT @ v


def _bit_matrix(K: int) -> np.ndarray:
    states = np.arange(2**K)
    return ((states[:, None] >> np.arange(K)[None, :]) & 1).astype(np.int8)


def exclusion_generator(env: Environment, rho0: Profile | None = None) -> sparse.csr_matrix:
    """Rate matrix on ``{0,1}^K`` (bit ``i`` is the site ``x_min + i``)."""
    w = env.window
    K = w.size
    if K > MAX_SITES:
        raise ValueError(f"state space 2^{K} too large; K must be at most {MAX_SITES}")
    rates = env.channel_rates()
    states = np.arange(2**K)
    bits = _bit_matrix(K)
    rows, cols, vals = [], [], []
    pairs = [(i, i + 1, rates[i]) for i in range(K - 1)]
    if w.periodic:
        pairs.append((K - 1, 0, rates[K - 1]))
    for a, b, r in pairs:
        src = states[bits[:, a] != bits[:, b]]
        rows.append(src)
        cols.append(src ^ ((1 << a) | (1 << b)))
        vals.append(np.full(src.size, r))
    if not w.periodic:
        if rho0 is None:
            raise ValueError("frozen-buffer windows need the profile for their reservoirs")
        rl, rr = reservoir_densities(w, rho0)
        for site, r, rho in ((0, rates[K - 1], rl), (K - 1, rates[K], rr)):
            src = states
            occ = bits[:, site] == 1
            rows.append(src)
            cols.append(src ^ (1 << site))
            vals.append(np.where(occ, r * (1 - rho), r * rho))
    rows, cols, vals = (np.concatenate(v) for v in (rows, cols, vals))
    keep = vals > 0
    Q = sparse.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(2**K, 2**K)).tocsr()
    Q = Q - sparse.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def product_law(p: np.ndarray) -> np.ndarray:
    """Product Bernoulli law with marginals ``p`` as a vector on ``{0,1}^K``."""
    bits = _bit_matrix(p.size)
    return np.prod(np.where(bits == 1, p[None, :], 1 - p[None, :]), axis=1)


@dataclass
class ExactLaw:
    env: Environment
    times: np.ndarray
    probs: np.ndarray
    integrals: np.ndarray
    truncation: float
    bits: np.ndarray = field(repr=False)

    def one_point(self, k: int) -> np.ndarray:
        return self.probs[k] @ self.bits

    def two_point(self, k: int) -> np.ndarray:
        """``E[eta(x) eta(y)] - rho(x) rho(y)`` with the diagonal set to 0."""
        b = self.bits.astype(float)
        second = b.T @ (self.probs[k][:, None] * b)
        rho = np.diag(second).copy()
        phi = second - np.outer(rho, rho)
        np.fill_diagonal(phi, 0.0)
        return phi

    def three_point(self, k: int) -> np.ndarray:
        """Centred third moments ``E[bar eta(x) bar eta(y) bar eta(z)]`` for distinct sites."""
        rho = self.one_point(k)
        c = self.bits - rho[None, :]
        p = self.probs[k]
        out = np.einsum("s,si,sj,sk->ijk", p, c, c, c)
        K = rho.size
        i, j, l = np.meshgrid(np.arange(K), np.arange(K), np.arange(K), indexing="ij")
        out[(i == j) | (j == l) | (i == l)] = 0.0
        return out

    def mean_current(self, i: int) -> np.ndarray:
        """Expected net current through the channel between sites ``i`` and ``i + 1``."""
        r = self.env.channel_rates()[i]
        occ = self.integrals @ self.bits
        j = (i + 1) % self.bits.shape[1]
        return r * (occ[:, i] - occ[:, j])


def master_equation(env: Environment, t_grid, rho0: Profile | None = None,
                    distribution: np.ndarray | None = None, starred: bool = False) -> ExactLaw:
    """Exact law on the window (``K = window size <= 12``) at each grid time."""
    K = env.window.size
    if K > MAX_SITES:
        raise ValueError(f"K = {K} exceeds the limit of {MAX_SITES} sites")
    Q = exclusion_generator(env, rho0)
    if distribution is None:
        if rho0 is None:
            raise ValueError("give either a profile or an explicit distribution")
        p0 = product_law(initial_values(env.window, rho0, starred))
    else:
        p0 = np.asarray(distribution, dtype=float)
        if p0.shape != (2**K,) or abs(p0.sum() - 1) > 1e-12 or p0.min() < 0:
            raise ValueError("distribution must be a probability vector on {0,1}^K")
    times = np.asarray(t_grid, dtype=float)
    probs, ints, trunc = propagate(_SparseGenerator(Q), p0, times, integrals=True)
    return ExactLaw(env, times, probs, ints, trunc, _bit_matrix(K))


def detailed_balance_defect(env: Environment, alpha: float) -> float:
    """``max |nu(a) Q(a,b) - nu(b) Q(b,a)|`` for the product measure ``nu_alpha``."""
    prof = Profile.constant(alpha)
    Q = exclusion_generator(env, prof).tocoo()
    nu = product_law(np.full(env.window.size, alpha))
    off = Q.row != Q.col
    flow = sparse.coo_matrix((nu[Q.row[off]] * Q.data[off], (Q.row[off], Q.col[off])), shape=Q.shape).tocsr()
    return float(abs(flow - flow.T).max()) if flow.nnz else 0.0


# --------------------------------------------------------------------------
# two-point correlations


def _adjacent(env: Environment) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjacent site pairs (a, b) and their bond rates, including the wrap bond."""
    S = env.window.size
    rates = env.channel_rates()
    a = np.arange(S - 1)
    b = a + 1
    r = rates[: S - 1]
    if env.window.periodic:
        a = np.append(a, S - 1)
        b = np.append(b, 0)
        r = np.append(r, rates[S - 1])
    return a, b, r


class _PairOperator:
    """``L_2`` acting on symmetric matrices with zero diagonal."""

    def __init__(self, env: Environment):
        self.chain = chain_of(env)
        self.a, self.b, self.r = _adjacent(env)
        self.S = env.window.size

    def apply(self, phi: np.ndarray) -> np.ndarray:
        A = self.chain
        phi = phi.copy()
        np.fill_diagonal(phi, 0.0)
        out = A.apply(phi) + A.apply(phi.T).T
        # two exclusion particles cannot land on each other
        out[self.a, self.b] += 2 * self.r * phi[self.a, self.b]
        out[self.b, self.a] += 2 * self.r * phi[self.b, self.a]
        np.fill_diagonal(out, 0.0)
        return out

    def source(self, rho: np.ndarray) -> np.ndarray:
        g = np.zeros((self.S, self.S))
        val = -self.r * (rho[self.a] - rho[self.b]) ** 2
        g[self.a, self.b] = val
        g[self.b, self.a] = val
        return g


@dataclass
class TwoPointTrajectory:
    env: Environment
    times: np.ndarray
    phi: np.ndarray | None          # (T, S, S) when kept
    sup_times: np.ndarray
    sup_abs: np.ndarray             # sup_{x != y} |phi_t| along the integration
    method: str
    iterations: list | None = None  # CG iterations per implicit step

    @property
    def sup(self) -> float:
        return float(self.sup_abs.max())

    def to_csv(self, path) -> None:
        if self.phi is None:
            raise ValueError("fields were not kept")
        sites = self.env.window.sites()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "x", "y", "phi"])
            for t, P in zip(self.times, self.phi):
                for i in range(len(sites)):
                    for j in range(i + 1, len(sites)):
                        out.writerow([repr(float(t)), int(sites[i]), int(sites[j]), repr(float(P[i, j]))])


def two_point_ode(env: Environment, rho0: Profile, t_grid, starred: bool = False, method: str = "auto",
                  dt: float | None = None, keep: bool | None = None, rtol: float = 1e-11,
                  atol: float = 1e-13) -> TwoPointTrajectory:
    """Two-point correlations from the closed hierarchy at ``n = 2``.

    ``method="ivp"`` integrates ``(rho, phi)`` jointly with an adaptive
    high-order scheme (small windows); ``method="implicit"`` uses BDF2 with
    conjugate-gradient solves and the exact ``rho`` from ``solve_discrete``
    (large windows). ``dt`` is a step or a list of ``(until, step)`` segments,
    e.g. ``[(0.3, 0.01), (1.0, 0.05)]``.
    """
    times = np.asarray(t_grid, dtype=float)
    S = env.window.size
    op = _PairOperator(env)
    if method == "auto":
        method = "ivp" if S <= 64 else "implicit"
    keep = (S <= 256) if keep is None else keep
    if method == "ivp":
        chain = op.chain
        if env.window.periodic:
            src = np.zeros(S)
        else:
            rl, rr = reservoir_densities(env.window, rho0)
            src = np.zeros(S)
            src[0] = chain.kill_left * rl
            src[-1] += chain.kill_right * rr

        def rhs(t, y):
            rho = y[:S]
            phi = y[S:].reshape(S, S)
            return np.concatenate([chain.apply(rho) + src, (op.apply(phi) + op.source(rho)).ravel()])

        y0 = np.concatenate([initial_values(env.window, rho0, starred), np.zeros(S * S)])
        sol = integrate.solve_ivp(rhs, (0.0, float(times[-1])), y0, method="DOP853", t_eval=times,
                                  rtol=rtol, atol=atol)
        if not sol.success:
            raise ArithmeticError(f"two-point integration failed: {sol.message}")
        phi = sol.y[S:].T.reshape(len(times), S, S)
        sup = np.abs(phi).max(axis=(1, 2))
        return TwoPointTrajectory(env, times, phi if keep else None, times, sup, "ivp")
    if method != "implicit":
        raise ValueError(f"unknown method {method!r}")
    return _two_point_bdf2(env, rho0, times, starred, op, dt, keep)


def _two_point_bdf2(env, rho0, times, starred, op: _PairOperator, dt, keep):
    S = env.window.size
    t_end = float(times[-1])
    if dt is None:
        dt = t_end / 200
    segments = [(t_end, float(dt))] if np.isscalar(dt) else [(float(a), float(b)) for a, b in dt]
    pieces, start = [np.zeros(1)], 0.0
    for until, step in segments:
        until = min(until, t_end)
        if until > start:
            n = int(math.ceil((until - start) / step - 1e-9))
            pieces.append(np.linspace(start, until, n + 1)[1:])
            start = until
    if start < t_end:
        raise ValueError("step segments do not reach the final time")
    grid = np.unique(np.concatenate(pieces + [times]))
    rho = solve_discrete(env, rho0, grid, starred=starred).values
    phi_prev = np.zeros((S, S))
    phi = np.zeros((S, S))
    sup = np.zeros(grid.size)
    kept = {0.0: phi.copy()} if keep else None

    # preconditioner: the independent-walker resolvent, diagonalized exactly
    # (eigenbasis of A) or, on a ring, by FFT with the harmonic-mean rate
    if env.window.periodic:
        rates = np.append(op.chain.bonds, op.chain.wrap)
        r_h = 1.0 / np.mean(1.0 / rates)
        lam = -2.0 * r_h * (1.0 - np.cos(2 * np.pi * np.arange(S) / S))

        def basis_solve(R, weight):
            return np.fft.ifft2(np.fft.fft2(R) * weight).real
    else:
        lam, V = linalg.eigh(op.chain.dense())

        def basis_solve(R, weight):
            return V @ ((V.T @ R @ V) * weight) @ V.T
    lam_sum = lam[:, None] + lam[None, :]
    iterations = []

    def solve(c, rhs, guess):
        def mv(v):
            P = v.reshape(S, S)
            out = P - c * op.apply(P)
            out[np.diag_indices(S)] = np.diag(P)  # identity on the inactive diagonal
            return out.ravel()

        weight = 1.0 / (1.0 - c * lam_sum)

        def pc(v):
            return basis_solve(v.reshape(S, S), weight).ravel()

        lin = splinalg.LinearOperator((S * S, S * S), matvec=mv, dtype=float)
        pre = splinalg.LinearOperator((S * S, S * S), matvec=pc, dtype=float)
        count = [0]

        def tick(_):
            count[0] += 1

        x, info = splinalg.cg(lin, rhs.ravel(), x0=guess.ravel(), M=pre, rtol=1e-9, atol=1e-16,
                              maxiter=2000, callback=tick)
        iterations.append(count[0])
        if info != 0:
            raise ArithmeticError(f"CG failed to converge (info={info}); reduce the step below {c:g}")
        x = x.reshape(S, S)
        return 0.5 * (x + x.T)

    for k in range(1, grid.size):
        h = grid[k] - grid[k - 1]
        g = op.source(rho[k])
        if k == 1 or not math.isclose(h, grid[k - 1] - grid[k - 2], rel_tol=1e-9):
            new = solve(h, phi + h * g, phi)          # backward Euler
        else:
            rhs = (4 * phi - phi_prev) / 3 + (2 * h / 3) * g
            new = solve(2 * h / 3, rhs, 2 * phi - phi_prev)
        np.fill_diagonal(new, 0.0)
        phi_prev, phi = phi, new
        sup[k] = np.abs(phi).max()
        if keep and np.any(np.isclose(times, grid[k], rtol=0, atol=1e-12)):
            kept[float(grid[k])] = phi.copy()
    fields = None
    if keep:
        fields = np.stack([kept[min(kept, key=lambda s: abs(s - t))] for t in times])
    return TwoPointTrajectory(env, times, fields, grid, sup, "implicit", iterations)


# --------------------------------------------------------------------------
# random walk in the bond environment


@dataclass
class WalkKernel:
    env: Environment
    times: np.ndarray
    matrices: np.ndarray            # (T, S, S)
    truncation: float
    boundary: str
    scaled: bool

    def diagonal_sup_sqrt_t(self, probe: np.ndarray | None = None) -> np.ndarray:
        """``sup_x p_t(x, x) sqrt(t)`` per time (over ``probe`` indices if given)."""
        idx = np.arange(self.matrices.shape[1]) if probe is None else probe
        diag = self.matrices[:, idx, idx]
        return diag.max(axis=1) * np.sqrt(self.times)

    def to_csv(self, path, source: int) -> None:
        sites = self.env.window.sites()
        i = self.env.window.index(source)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "x", "p"])
            for t, P in zip(self.times, self.matrices):
                for x, v in zip(sites, P[i]):
                    out.writerow([repr(float(t)), int(x), repr(float(v))])


def walk_chain(env: Environment, boundary: str | None = None, scaled: bool = False) -> Chain:
    """Generator of one walker; rates ``xi`` (or ``N^2 xi`` when scaled)."""
    boundary = boundary or ("periodic" if env.window.periodic else "reflecting")
    c = (env.N**2 if scaled else 1.0)
    inner = c * env.interior()
    if boundary == "periodic":
        return Chain(inner.copy(), wrap=float(c * env.xi[-1]))
    if boundary == "reflecting":
        return Chain(inner.copy())
    if boundary == "killing":
        return Chain(inner.copy(), kill_left=float(c * env.xi[0]), kill_right=float(c * env.xi[-1]))
    raise ValueError(f"unknown walk boundary {boundary!r}")


def walk_kernel(env: Environment, t_grid, boundary: str | None = None, scaled: bool = False,
                probe_radius: int | None = None, boundary_mass: float = 1e-10) -> WalkKernel:
    """Transition matrices ``p_t(x, y)`` of the walk with generator ``L_1``.

    With ``probe_radius`` set, walkers started within that distance of the
    origin must keep their mass at the window's edge sites below
    ``boundary_mass``; otherwise the window is rejected.
    """
    chain = walk_chain(env, boundary, scaled)
    times = np.asarray(t_grid, dtype=float)
    S = chain.size
    mats, _, trunc = propagate(chain, np.eye(S), times)
    if probe_radius is not None:
        i0 = env.window.index(0)
        rows = np.arange(max(0, i0 - probe_radius), min(S, i0 + probe_radius + 1))
        edge = max(float(mats[:, rows][:, :, [0, -1]].max()), 0.0)
        if edge > boundary_mass:
            raise ValueError(f"walk mass {edge:.1e} reaches the window edge; enlarge the window")
    return WalkKernel(env, times, mats, trunc, boundary or ("periodic" if env.window.periodic else "reflecting"),
                      scaled)


def fit_nash_constant(sup_sqrt_t: np.ndarray, margin: float = 1.1) -> float:
    """Envelope constant fitted on training times: ``margin`` times the largest value."""
    return float(margin * np.max(sup_sqrt_t))


def write_fit_report(path, exponent: float, constant: float, residual: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"exponent": exponent, "constant": constant, "residual": residual}, fh, indent=2)


# --------------------------------------------------------------------------
# Liggett comparison


def _pair_generators(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """Generators of two independent walkers (K^2 states) and of two exclusion
    particles (same states; moves onto the other particle suppressed)."""
    chain = walk_chain(env, "periodic" if env.window.periodic else "reflecting", scaled=True)
    A = chain.dense()
    K = A.shape[0]
    I = np.eye(K)
    indep = np.kron(A, I) + np.kron(I, A)
    excl = indep.copy()
    for x in range(K):
        for y in range(K):
            if x == y:
                continue
            s = x * K + y
            # move of the first particle onto y, and of the second onto x
            for target in (y * K + y, x * K + x):
                rate = excl[s, target]
                if rate:
                    excl[s, target] = 0.0
                    excl[s, s] += rate
    return indep, excl


class DefinitenessError(ValueError):
    def __init__(self, message: str, direction: np.ndarray):
        super().__init__(message)
        self.direction = direction


def check_definite_positive(f: np.ndarray, tol: float = 1e-10) -> float:
    """Smallest eigenvalue of ``f`` restricted to mean-zero vectors on the window.

    Raises ``DefinitenessError`` (carrying the violating direction) below ``-tol``.
    Only necessary for the condition on infinite sequences.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 2 or f.shape[0] != f.shape[1] or not np.allclose(f, f.T):
        raise ValueError("f must be a symmetric matrix on pairs of sites")
    K = f.shape[0]
    # orthonormal basis of the mean-zero subspace
    B = linalg.null_space(np.ones((1, K)))
    lam, vec = linalg.eigh(B.T @ f @ B)
    if lam[0] < -tol:
        raise DefinitenessError(f"f is not definite positive: quadratic form {lam[0]:.3e} < 0", B @ vec[:, 0])
    return float(lam[0])


def liggett_check(env: Environment, f: np.ndarray, t_grid, tol: float = 1e-10) -> dict:
    """Exact two-particle semigroups; checks ``S_2(t) f <= S_2^0(t) f`` off the diagonal."""
    K = env.window.size
    if K > 10:
        raise ValueError("liggett_check is limited to K <= 10 sites")
    f = np.asarray(f, dtype=float)
    if f.shape != (K, K):
        raise ValueError("f must be a K x K matrix")
    lam_min = check_definite_positive(f, tol)
    indep, excl = _pair_generators(env)
    vec = f.ravel()
    off = ~np.eye(K, dtype=bool).ravel()
    margins = []
    for t in np.asarray(t_grid, dtype=float):
        s0 = linalg.expm(t * indep) @ vec
        s2 = linalg.expm(t * excl) @ vec
        margins.append(float(np.min((s0 - s2)[off])))
    return {"t": list(map(float, t_grid)), "margins": margins, "min_eigenvalue": lam_min,
            "passed": bool(min(margins) >= -tol)}


# --------------------------------------------------------------------------
# hitting and coalescence


def harmonic_coordinate(env: Environment, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """``u(0) = 0``, ``u(x+1) - u(x) = 1/xi_x`` on sites ``lo .. hi``."""
    xs = np.arange(lo, hi + 1)
    u = np.zeros(xs.size)
    i0 = 0 - lo
    inv = 1.0 / np.asarray(env.bond(np.arange(lo, hi)))
    u[i0 + 1:] = np.cumsum(inv[i0:])
    u[:i0] = -np.cumsum(inv[:i0][::-1])[::-1]
    return xs, u


def exact_hit_probability(env: Environment, a: int, b: int) -> float:
    """``P_0(tau_a < tau_b) = -u(b) / (u(a) - u(b))`` for ``b < 0 < a``."""
    if not b < 0 < a:
        raise ValueError("targets must satisfy b < 0 < a")
    xs, u = harmonic_coordinate(env, b, a)
    return float(-u[0] / (u[-1] - u[0]))


class _BondTable:
    """Conductances on a range of bonds, for vectorized walkers."""

    def __init__(self, env: Environment, radius: int):
        self.lo = -radius
        self.xi = np.asarray(env.bond(np.arange(-radius, radius + 1)), dtype=float)
        self.radius = radius

    def __call__(self, x: np.ndarray) -> np.ndarray:
        i = x - self.lo
        if i.size and (i.min() < 0 or i.max() >= self.xi.size):
            raise ValueError("walker left the tabulated bonds; increase the radius")
        return self.xi[i]


def _walk_step(x, table, rng):
    """One jump of each walker in ``x``; returns the holding times."""
    left = table(x - 1)
    right = table(x)
    tot = left + right
    hold = rng.exponential(size=x.size) / tot
    step = np.where(rng.random(x.size) * tot < right, 1, -1)
    return x + step, hold


@dataclass
class HittingReport:
    a: int
    b: int
    exact: float
    mc: float
    se: float
    replicas: int
    t_grid: np.ndarray
    hit_tail: np.ndarray
    hit_tail_se: np.ndarray
    coalescence_tail: np.ndarray
    coalescence_se: np.ndarray
    envelope_constant: float
    envelope_slope: float
    warnings: list[str]

    def to_dict(self) -> dict:
        d = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        return d


def hitting_and_coalescence(env: Environment, a: int, b: int, t_grid, replicas: int = 100_000,
                            seed: int = 0, target_se: float | None = None) -> HittingReport:
    """Exact and Monte Carlo hitting probabilities, hitting tails and coalescence tails.

    Walkers use the unscaled rates ``xi``; ``t_grid`` is in the same units.
    """
    if not b < 0 < a:
        raise ValueError("targets must satisfy b < 0 < a")
    times = np.asarray(t_grid, dtype=float)
    t_max = float(times[-1])
    rng = replica_generator(seed, 0)
    spread = math.sqrt(2 * t_max / env.epsilon)
    table = _BondTable(env, int(max(abs(a), abs(b)) + 12 * spread + 20))
    warns: list[str] = []

    # gambler's ruin between b and a
    x = np.zeros(replicas, dtype=np.int64)
    alive = np.ones(replicas, dtype=bool)
    while alive.any():
        idx = np.nonzero(alive)[0]
        x[idx], _ = _walk_step(x[idx], table, rng)
        alive[idx] = (x[idx] > b) & (x[idx] < a)
    hits = (x == a).astype(float)
    p_mc = float(hits.mean())
    se = float(hits.std(ddof=1) / math.sqrt(replicas))
    if target_se is not None and se > target_se:
        warns.append(f"achieved SE {se:.2e} above the requested {target_se:.2e}")

    def tails(first, second=None):
        """Times until ``first`` hits ``a`` (or until the two walkers meet), capped at t_max."""
        t = np.zeros(replicas)
        done = np.full(replicas, np.inf)
        X = np.full(replicas, first, dtype=np.int64)
        Y = None if second is None else np.full(replicas, second, dtype=np.int64)
        live = np.ones(replicas, dtype=bool)
        while live.any():
            idx = np.nonzero(live)[0]
            if Y is None:
                X[idx], h = _walk_step(X[idx], table, rng)
                t[idx] += h
                met = X[idx] == a
            else:
                # jump of either walker, chosen by its total rate
                rx = table(X[idx] - 1) + table(X[idx])
                ry = table(Y[idx] - 1) + table(Y[idx])
                tot = rx + ry
                t[idx] += rng.exponential(size=idx.size) / tot
                move_x = rng.random(idx.size) * tot < rx
                nx, _ = _walk_step(X[idx], table, rng)
                ny, _ = _walk_step(Y[idx], table, rng)
                X[idx] = np.where(move_x, nx, X[idx])
                Y[idx] = np.where(move_x, Y[idx], ny)
                met = X[idx] == Y[idx]
            over = t[idx] > t_max
            done[idx[met & ~over]] = t[idx[met & ~over]]
            live[idx[met | over]] = False
        P = (done[None, :] > times[:, None]).mean(axis=1)
        return P, np.sqrt(P * (1 - P) / replicas)

    hit_tail, hit_se = tails(0)
    coal, coal_se = tails(0, 1)
    env_vals = coal * np.sqrt(1 + times)
    late = times >= np.median(times)
    mask = late & (coal > 0)
    slope = float(np.polyfit(np.log1p(times[mask]), np.log(env_vals[mask]), 1)[0]) if mask.sum() >= 2 else 0.0
    return HittingReport(a, b, exact_hit_probability(env, a, b), p_mc, se, replicas, times, hit_tail, hit_se,
                         coal, coal_se, float(env_vals.max()), slope, warns)


# --------------------------------------------------------------------------
# space-time correlations


@dataclass
class SpaceTimeCorrelation:
    s: float
    y: int
    times: np.ndarray
    psi: np.ndarray                 # (T, S)
    sup_abs: np.ndarray
    bound_shape: np.ndarray         # (1/N)(sqrt(s) + 1/sqrt(t - s)), inf at t = s


def space_time_correlation(env: Environment, rho0: Profile, s: float, y: int, t_grid,
                           starred: bool = False, two_point: TwoPointTrajectory | None = None) -> SpaceTimeCorrelation:
    """``psi_t(x) = E[bar eta_s(y) bar eta_t(x)]`` for ``t >= s``.

    Starts from ``phi_s(x, y)`` off the diagonal and ``rho_s(y)(1 - rho_s(y))``
    on it, then evolves under the scaled single-walker generator.
    """
    times = np.asarray(t_grid, dtype=float)
    if np.any(times < s):
        raise ValueError("every t must be at least s")
    w = env.window
    i = w.index(y)
    if s > 0:
        if two_point is None:
            two_point = two_point_ode(env, rho0, [s], starred=starred, keep=True)
        phi = two_point.phi[int(np.argmin(np.abs(two_point.times - s)))]
    else:
        phi = np.zeros((w.size, w.size))  # product initial measure
    rho_s = solve_discrete(env, rho0, [s] if s > 0 else [0.0], starred=starred).values[0]
    psi0 = phi[:, i].copy()
    psi0[i] = chi(rho_s[i])
    chain = chain_of(env)
    vals, _, _ = propagate(chain, psi0, times - s)
    sup = np.abs(vals).max(axis=1)
    with np.errstate(divide="ignore"):
        bound = (math.sqrt(s) + 1.0 / np.sqrt(times - s)) / w.N
    return SpaceTimeCorrelation(s, y, times, vals, sup, bound)
