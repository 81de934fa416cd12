"""Deterministic solvers: the discrete one-point equation, the continuum heat
equation, the tagged-particle centerings and the gradient bound.

The discrete equation is linear,

    d rho_t(x)/dt = N^2 { xi_x (rho_t(x+1) - rho_t(x)) - xi_{x-1} (rho_t(x) - rho_t(x-1)) },

with, on a frozen-buffer window, the reservoir terms ``N^2 xi_b (rho_b - rho(edge))``
at both ends. It is solved exactly (uniformization or eigendecomposition) or by
explicit RK4 stepping. The continuum equation ``d rho/dt = gamma^{-1} rho''`` is
solved by Gaussian convolution with Gauss-Hermite quadrature.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from ._linear import Chain, propagate, spectral
from .environment import Environment, LatticeWindow
from .functions import Profile

UNIFORMIZATION_MAX_SITES = 4096
SPECTRAL_MAX_SITES = 8192


def chain_of(env: Environment, killing: bool | None = None) -> Chain:
    """The single-site generator of the dynamics on ``env``'s window (rates N^2 xi)."""
    rates = env.channel_rates()
    S = env.window.size
    if env.window.periodic:
        return Chain(rates[: S - 1].copy(), wrap=float(rates[S - 1]))
    kill = True if killing is None else killing
    return Chain(rates[: S - 1].copy(),
                 kill_left=float(rates[S - 1]) if kill else 0.0,
                 kill_right=float(rates[S]) if kill else 0.0)


def reservoir_densities(window: LatticeWindow, rho0: Profile) -> tuple[float, float]:
    """Reservoir densities: the initial profile at the two edge sites."""
    N = window.N
    return float(rho0(window.x_min / N)), float(rho0(window.x_max / N))


def initial_values(window: LatticeWindow, rho0: Profile, starred: bool = False) -> np.ndarray:
    vals = np.asarray(rho0(window.sites() / window.N), dtype=float)
    if vals.min() < 0 or vals.max() > 1:
        raise ValueError("initial profile must take values in [0, 1]")
    if starred:
        vals[window.index(0)] = 1.0
    return vals


@dataclass(frozen=True)
class DiscreteProfile:
    """``rho_t^N`` on a window at one time."""

    window: LatticeWindow
    t: float
    values: np.ndarray = field(repr=False)
    starred: bool
    env: Environment = field(repr=False)

    def at(self, x):
        return self.values[self.window.index(x)]


@dataclass
class DiscreteTrajectory:
    """Solution of the one-point equation on a time grid.

    ``integrals[k]`` is ``int_0^{t_k} rho_s ds`` per site, produced by the same
    propagator as ``values`` so that mean currents are consistent with them.
    """

    env: Environment
    profile: Profile
    times: np.ndarray
    values: np.ndarray
    integrals: np.ndarray
    starred: bool
    method: str
    truncation: float
    grad_sup: np.ndarray = field(init=False)
    h_sup: np.ndarray = field(init=False)

    def __post_init__(self):
        g = self.gradients()
        xi = self.env.interior()
        if self.window.periodic:
            # the wrap bond belongs to the ring
            g = np.concatenate([g, self.window.N * (self.values[:, :1] - self.values[:, -1:])], axis=1)
            xi = np.concatenate([xi, self.env.xi[-1:]])
        self.grad_sup = np.abs(g).max(axis=1)
        self.h_sup = np.abs(g * xi[None, :]).max(axis=1)

    @property
    def window(self) -> LatticeWindow:
        return self.env.window

    def gradients(self) -> np.ndarray:
        """``N (rho(x+1) - rho(x))`` over interior bonds, per time."""
        return self.window.N * np.diff(self.values, axis=1)

    def time_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-12, abs_tol=1e-12):
            raise KeyError(f"time {t} not on the trajectory's grid")
        return k

    def profile_at(self, t: float) -> DiscreteProfile:
        k = self.time_index(t)
        return DiscreteProfile(self.window, float(self.times[k]), self.values[k], self.starred, self.env)

    def mean_current(self, x: int) -> np.ndarray:
        """Expected net current through bond (x, x+1), per grid time."""
        w = self.window
        if not w.x_min <= x < w.x_max:
            raise ValueError("mean_current needs an interior bond")
        i = w.index(x)
        n2xi = w.N**2 * self.env.bond(x)
        return n2xi * (self.integrals[:, i] - self.integrals[:, i + 1])

    def to_csv(self, path) -> None:
        sites = self.window.sites()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "x", "rho"])
            for t, row in zip(self.times, self.values):
                for x, r in zip(sites, row):
                    out.writerow([repr(float(t)), int(x), repr(float(r))])


def solve_discrete(env: Environment, rho0: Profile, t_grid, starred: bool = False,
                   method: str = "auto", step: float | None = None) -> DiscreteTrajectory:
    """Integrate the one-point equation on ``env``'s window.

    Parameters
    ----------
    method : {"auto", "uniformization", "spectral", "explicit"}
        ``auto`` picks uniformization up to 4096 sites, then an
        eigendecomposition up to 8192 sites, then explicit RK4.
    step : float, optional
        RK4 step for the explicit method; must respect the stability limit.
    """
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise ValueError("t_grid must be increasing and non-negative")
    w = env.window
    v0 = initial_values(w, rho0, starred)
    chain = chain_of(env)
    # affine shift: rho_t = rho_inf + e^{tA}(rho_0 - rho_inf)
    if w.periodic:
        rho_inf = np.zeros(w.size)
    else:
        rl, rr = reservoir_densities(w, rho0)
        src = np.zeros(w.size)
        src[0] = chain.kill_left * rl
        src[-1] += chain.kill_right * rr
        rho_inf = chain.steady(src)
    if method == "auto":
        method = ("uniformization" if w.size <= UNIFORMIZATION_MAX_SITES
                  else "spectral" if w.size <= SPECTRAL_MAX_SITES else "explicit")
    truncation = 0.0
    if method == "uniformization":
        vals, ints, truncation = propagate(chain, v0 - rho_inf, times, integrals=True)
    elif method == "spectral":
        vals, ints = spectral(chain, v0 - rho_inf, times, integrals=True)
    elif method == "explicit":
        vals, ints = _rk4(chain, v0 - rho_inf, times, step)
    else:
        raise ValueError(f"unknown method {method!r}")
    vals = vals + rho_inf
    ints = ints + times[:, None] * rho_inf
    return DiscreteTrajectory(env, rho0, times, vals, ints, starred, method, truncation)


def _rk4(chain: Chain, v: np.ndarray, times: np.ndarray, step: float | None):
    lam_max = 2.0 * chain.exit_rates().max()
    limit = 2.78 / lam_max  # RK4 real-axis stability
    h = 0.5 * limit if step is None else float(step)
    if h > limit:
        raise ValueError(f"explicit step {h:g} exceeds the stability limit; use step <= {limit:g}")
    vals, ints = [], []
    t, y, acc = 0.0, v.copy(), np.zeros_like(v)

    def f(z):
        return chain.apply(z)

    for target in times:
        while t < target - 1e-15:
            dt = min(h, target - t)
            k1 = f(y)
            k2 = f(y + 0.5 * dt * k1)
            k3 = f(y + 0.5 * dt * k2)
            k4 = f(y + dt * k3)
            # the integral obeys I' = y, integrated with the same stages
            acc += dt / 6 * (y + 2 * (y + 0.5 * dt * k1) + 2 * (y + 0.5 * dt * k2) + (y + dt * k3))
            y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
        vals.append(y.copy())
        ints.append(acc.copy())
    return np.array(vals), np.array(ints)


# --------------------------------------------------------------------------
# continuum


_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gh(n: int):
    if n not in _GH_CACHE:
        x, w = np.polynomial.hermite_e.hermegauss(n)
        _GH_CACHE[n] = (x, w / math.sqrt(2 * math.pi))
    return _GH_CACHE[n]


def gaussian_average(f, u, sd: float, n: int = 120, tol: float | None = None):
    """``E[f(u + sd Z)]`` by Gauss-Hermite quadrature; optional error check
    against half as many nodes."""
    u = np.asarray(u, dtype=float)
    if sd == 0:
        return f(u)
    x, w = _gh(n)
    val = np.tensordot(f(u[..., None] + sd * x), w, axes=([-1], [0]))
    if tol is not None:
        x2, w2 = _gh(n // 2)
        val2 = np.tensordot(f(u[..., None] + sd * x2), w2, axes=([-1], [0]))
        err = float(np.max(np.abs(val - val2))) if val.size else 0.0
        if err > tol:
            raise ArithmeticError(f"Gauss-Hermite error estimate {err:.2e} above tolerance {tol:.0e}")
    return val


def heat_sd(t: float, gamma: float) -> float:
    """Standard deviation sqrt(2t/gamma) of the heat kernel at time t."""
    return math.sqrt(2.0 * t / gamma)


def rho_continuum(gamma: float, rho0: Profile, t: float, u, grad: bool = False, tol: float | None = None):
    f = rho0.derivative if grad else rho0
    return gaussian_average(f, u, heat_sd(t, gamma), tol=tol)


@dataclass
class ContinuumSolution:
    gamma: float
    profile: Profile
    times: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    drho: np.ndarray
    kernel: str = "Gaussian, variance 2t/gamma"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "u", "rho", "drho"])
            for i, t in enumerate(self.times):
                for j, u in enumerate(self.u):
                    out.writerow([repr(float(t)), repr(float(u)), repr(float(self.rho[i, j])),
                                  repr(float(self.drho[i, j]))])


def solve_heat(gamma: float, rho0: Profile, t_grid, u_grid, tol: float = 1e-9) -> ContinuumSolution:
    """``rho(t, u)`` and its derivative on a grid, by Gaussian convolution."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    times = np.atleast_1d(np.asarray(t_grid, dtype=float))
    u = np.atleast_1d(np.asarray(u_grid, dtype=float))
    rho = np.array([rho_continuum(gamma, rho0, t, u, tol=tol) for t in times])
    drho = np.array([rho_continuum(gamma, rho0, t, u, grad=True, tol=tol) for t in times])
    return ContinuumSolution(gamma, rho0, times, u, rho, drho)


def weak_pairing(gamma: float, rho0: Profile, t: float, G) -> float:
    """``<rho_t, G> = int rho(t, u) G(u) du`` for a test function with finite support."""
    lo, hi = G.support
    val, _ = integrate.quad(lambda u: float(rho_continuum(gamma, rho0, t, u)) * float(G(u)),
                            lo, hi, epsabs=1e-11, epsrel=1e-11, limit=200)
    return val


def mean_flux(gamma: float, rho0: Profile, t: float) -> float:
    """``-gamma^{-1} int_0^t d_u rho(s, 0) ds``, the limiting mean current through 0."""
    if t == 0:
        return 0.0
    val, _ = integrate.quad(lambda s: float(rho_continuum(gamma, rho0, s, 0.0, grad=True)),
                            0.0, t, epsabs=1e-13, epsrel=1e-12, limit=200)
    return -val / gamma


@dataclass
class Centering:
    times: np.ndarray
    u_ode: np.ndarray
    u_root: np.ndarray

    @property
    def max_diff(self) -> float:
        return float(np.max(np.abs(self.u_ode - self.u_root)))

    def __call__(self, t: float) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        return float(self.u_ode[k])


def compute_ut(gamma: float, rho0: Profile, t_grid, vacuum: float = 1e-6) -> Centering:
    """The centering ``u_t`` by the ODE and, independently, by root-finding the
    mass balance ``int_0^{u_t} rho(t, u) du = -gamma^{-1} int_0^t d_u rho(s, 0) ds``."""
    times = np.asarray(t_grid, dtype=float)

    def rhs(t, y):
        r = float(rho_continuum(gamma, rho0, t, y[0]))
        if r < vacuum:
            raise ArithmeticError(f"density {r:.2e} at the tagged centering is below the vacuum threshold")
        return [-float(rho_continuum(gamma, rho0, t, y[0], grad=True)) / (gamma * r)]

    if times[-1] > 0:
        sol = integrate.solve_ivp(rhs, (0.0, float(times[-1])), [0.0], method="DOP853",
                                  t_eval=times, rtol=1e-11, atol=1e-13)
        if not sol.success:
            raise ArithmeticError(sol.message)
        u_ode = sol.y[0]
    else:
        u_ode = np.zeros_like(times)

    roots = []
    for t, guess in zip(times, u_ode):
        if t == 0:
            roots.append(0.0)
            continue
        target = mean_flux(gamma, rho0, t)

        def mass(u):
            val, _ = integrate.quad(lambda v: float(rho_continuum(gamma, rho0, t, v)), 0.0, u,
                                    epsabs=1e-13, epsrel=1e-12)
            return val - target

        a, b = guess - 0.05, guess + 0.05
        while mass(a) > 0:
            a -= 0.5
        while mass(b) < 0:
            b += 0.5
        roots.append(optimize.brentq(mass, a, b, xtol=1e-13, rtol=1e-13))
    return Centering(times, np.asarray(u_ode, dtype=float), np.array(roots))


def partial_sum_extension(values: np.ndarray, window: LatticeWindow):
    """Signed partial sums ``S(u)``: ``sum_{0..u}`` for ``u >= 0``, ``S(-1) = 0``,
    ``S(-1-k) = -sum_{-k..-1}`` for ``k >= 1``. Returns (sites, S) for
    ``u = x_min - 1 .. x_max``."""
    i0 = window.index(0)
    right = np.cumsum(values[i0:])                     # S(0) .. S(x_max)
    left = -np.cumsum(values[:i0][::-1])[::-1]         # S(x_min - 1) .. S(-2)
    S = np.concatenate([left, [0.0], right])
    return np.arange(window.x_min - 1, window.x_max + 1), S


def compute_utN(env: Environment, traj: DiscreteTrajectory, t: float) -> int:
    """The discrete centering ``u_t^N`` from a starred trajectory.

    ``Q(t) = N^2 xi_{-1} int_0^t (rho*(-1) - rho*(0)) ds`` is located between
    consecutive signed partial sums; the result is shifted by one so that
    ``{X >= n} <=> {J >= sum_{0..n-1} eta}`` holds in mean and ``u_0^N = 0``.
    """
    if not traj.starred:
        raise ValueError("u_t^N is defined from the starred trajectory")
    k = traj.time_index(t)
    Q = float(traj.mean_current(-1)[k])
    sites, S = partial_sum_extension(traj.values[k], traj.window)
    if not S[0] <= Q < S[-1]:
        raise ValueError("Q(t) outside the window's partial-sum range; enlarge the window")
    j = int(np.searchsorted(S, Q, side="right")) - 1  # S[j] <= Q < S[j+1]
    return int(sites[j]) + 1


def gradient_bound_check(env: Environment, traj: DiscreteTrajectory, tol: float = 1e-9) -> dict:
    """Check ``sup_t sup_x |grad rho_t| <= eps^{-2} sup_x |grad rho_0|`` along a trajectory.

    The bound follows from the maximum principle for ``h = xi grad rho``, which
    is checked as well.
    """
    g0 = float(traj.grad_sup[0])
    gmax = float(traj.grad_sup.max())
    bound = g0 / env.epsilon**2
    report = {
        "sup_grad_0": g0,
        "sup_grad": gmax,
        "bound": bound,
        "ratio": gmax / g0 if g0 > 0 else 0.0,
        "ratio_bound": env.epsilon**-2,
        "h_sup_0": float(traj.h_sup[0]),
        "h_sup": float(traj.h_sup.max()),
        "grad_nonincreasing": bool(np.all(np.diff(traj.grad_sup) <= tol)),
    }
    report["passed"] = gmax <= bound + tol and report["h_sup"] <= report["h_sup_0"] + tol * (1 + report["h_sup_0"])
    if not report["passed"]:
        raise ArithmeticError(f"gradient bound violated: {report}")
    return report
