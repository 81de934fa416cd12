"""Monte Carlo estimators and quadratures of the limiting covariances.

All kernels below are those of the heat semigroup of ``gamma^{-1} Delta``:
``B_t`` is a centred Gaussian with variance ``2t/gamma``.

density   E[Y_s(G) Y_t(H)] = int chi(rho_0) T_s G T_t H
                             + (2/gamma) int_0^s dr int chi(rho_r) (T_{s-r} G)' (T_{t-r} H)'
current   E[J_s J_t]       = int_{v<0} P[B_s <= v] P[B_t <= v] chi(rho_0(v)) dv
                             + int_{v>0} P[B_s >= v] P[B_t >= v] chi(rho_0(v)) dv
                             + (2/gamma) int_0^s dr int p_{t-r}(0, v) p_{s-r}(0, v) chi(rho(r, v)) dv
tagged    the current formula with B replaced by u + B and the kernels centred
          at u_s, u_t, divided by rho(s, u_s) rho(t, u_t)

The current formula is the density formula applied to ``H_0 = 1{u >= 0}``;
``current_covariance_by_ramps`` recomputes it independently through the
approximations ``G_n(u) = (1 - u/n)^+ 1{u >= 0}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from statsmodels.stats.diagnostic import lilliefors

from .functions import Profile, TestFunction, chi, normal_sf
from .pde import Centering, compute_ut, gaussian_average, heat_sd, rho_continuum

QUAD_TOL = 1e-6


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass
class CovarianceEstimate:
    labels: list[str]
    M: int
    mean: np.ndarray
    mean_se: np.ndarray
    cov: np.ndarray
    se: np.ndarray               # jackknife standard errors of the covariance entries
    env_seed: int | None
    N: int | None

    def _i(self, label: str) -> int:
        return self.labels.index(label)

    def var(self, label: str) -> tuple[float, float]:
        i = self._i(label)
        return float(self.cov[i, i]), float(self.se[i, i])

    def covariance(self, a: str, b: str) -> tuple[float, float]:
        i, j = self._i(a), self._i(b)
        return float(self.cov[i, j]), float(self.se[i, j])


def jackknife_covariance(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance of the columns of ``X`` (M x k) and delete-one jackknife SEs."""
    X = np.asarray(X, dtype=float)
    M = X.shape[0]
    if M < 3:
        raise ValueError("at least three samples are needed for jackknife errors")
    D = X - X.mean(axis=0)
    Sxy = D.T @ D
    cov = Sxy / (M - 1)
    # leave-one-out: S_(i) = S - M/(M-1) d_i d_i^T, divided by M - 2
    outer = np.einsum("mi,mj->mij", D, D)
    loo = (Sxy[None] - (M / (M - 1)) * outer) / (M - 2)
    var = (M - 1) / M * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0)
    return cov, np.sqrt(var)


def estimate_covariance(source, observables=None, times=None, *, env_seeds=None,
                        N: int | None = None) -> CovarianceEstimate:
    """Covariances of observables across replicas.

    ``source`` is either an ``ObservableBatch`` (columns are the products of
    ``observables`` and ``times``; see ``ObservableBatch.column``) or a mapping
    from labels to sample arrays.

    Raises
    ------
    ValueError
        If the replicas do not share a single environment seed.
    """
    if isinstance(source, dict):
        labels = list(source)
        X = np.column_stack([np.asarray(source[k], dtype=float) for k in labels])
        seeds = None if env_seeds is None else np.asarray(env_seeds)
    else:
        labels, cols = [], []
        for name in observables:
            for t in times:
                labels.append(f"{name}@{t:g}")
                cols.append(source.column(name, t))
        X = np.column_stack(cols).astype(float)
        seeds = source.env_seeds
        N = source.N
    seed = None
    if seeds is not None and len(seeds):
        if np.unique(seeds).size != 1:
            raise ValueError("replicas come from different environments; quenched estimates need one")
        seed = int(seeds[0])
    cov, se = jackknife_covariance(X)
    M = X.shape[0]
    return CovarianceEstimate(labels, M, X.mean(axis=0), X.std(axis=0, ddof=1) / math.sqrt(M),
                              cov, se, seed, N)


def variance_with_se(x) -> tuple[float, float]:
    """Sample variance and its jackknife SE."""
    cov, se = jackknife_covariance(np.asarray(x, dtype=float)[:, None])
    return float(cov[0, 0]), float(se[0, 0])


# --------------------------------------------------------------------------
# theory


@dataclass
class TheoryCovariance:
    formula: str
    gamma: float
    profile: dict
    s: float
    t: float
    value: float
    quad_err: float
    test_functions: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_times(s: float, t: float) -> None:
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")


def _trapezoid_checked(f, lo: float, hi: float, n: int = 4001) -> tuple[float, float]:
    """Trapezoid rule on a smooth integrand; error estimated against half the nodes."""
    u = np.linspace(lo, hi, n)
    y = f(u)
    full = integrate.trapezoid(y, u)
    half = integrate.trapezoid(y[::2], u[::2])
    return float(full), float(abs(full - half))


def theory_density_covariance(gamma: float, profile: Profile, s: float, t: float,
                              G: TestFunction, H: TestFunction, tol: float = QUAD_TOL) -> TheoryCovariance:
    """Limiting ``E[Y_s(G) Y_t(H)]`` from the nonequilibrium fluctuation theorem."""
    _check_times(s, t)
    spread = 8 * heat_sd(t, gamma)
    lo = min(G.support[0], H.support[0]) - spread
    hi = max(G.support[1], H.support[1]) + spread
    n = int(min(20001, max(4001, 200 * (hi - lo) / min(G.width, H.width)))) | 1

    def first(u):
        return chi(profile(u)) * G.semigroup(s, gamma, u) * H.semigroup(t, gamma, u)

    v1, e1 = _trapezoid_checked(first, lo, hi, n)

    def inner(r: float) -> float:
        def f(u):
            rho = rho_continuum(gamma, profile, r, u)
            return chi(rho) * G.semigroup(s - r, gamma, u, grad=True) * H.semigroup(t - r, gamma, u, grad=True)

        return _trapezoid_checked(f, lo, hi, n)[0]

    v2, e2 = (0.0, 0.0)
    if s > 0:
        v2, e2 = integrate.quad(inner, 0.0, s, epsabs=tol / 10, epsrel=1e-10, limit=200)
        v2 *= 2.0 / gamma
        e2 *= 2.0 / gamma
    err = e1 + e2
    if err > tol:
        raise ArithmeticError(f"quadrature error estimate {err:.1e} above tolerance {tol:.0e}")
    return TheoryCovariance("density-f17", gamma, profile.to_dict(), s, t, v1 + v2, err,
                            [G.to_dict(), H.to_dict()], {"static": v1, "dynamic": v2})


def _gauss_product(mu1: float, var1: float, mu2: float, var2: float):
    """``p_{var1}(mu1 - v) p_{var2}(mu2 - v) = w N(v; m, vc)``; returns (w, m, vc)."""
    tot = var1 + var2
    w = math.exp(-((mu1 - mu2) ** 2) / (2 * tot)) / math.sqrt(2 * math.pi * tot)
    m = (mu1 * var2 + mu2 * var1) / tot
    return w, m, var1 * var2 / tot


def _chi_along(gamma: float, profile: Profile, r: float, m: float, vc: float) -> float:
    """``E[chi(rho(r, m + sqrt(vc) Z))]`` by nested Gauss-Hermite quadrature."""
    sd_r = heat_sd(r, gamma)
    return float(gaussian_average(lambda v: chi(gaussian_average(profile, v, sd_r)), m, math.sqrt(vc), n=60))


def _static_term(gamma: float, profile: Profile, s: float, t: float, us: float, ut: float) -> tuple[float, float]:
    """``int_{v<0} P[u_s+B_s <= v] P[u_t+B_t <= v] chi0 + int_{v>0} P[. >= v] P[. >= v] chi0``."""
    ss, st = heat_sd(s, gamma), heat_sd(t, gamma)

    def below(v, u, sd):  # P[u + B <= v]
        return normal_sf((u - v) / sd) if sd > 0 else (u <= v) * 1.0

    def above(v, u, sd):  # P[u + B >= v]
        return normal_sf((v - u) / sd) if sd > 0 else (u >= v) * 1.0

    c0 = lambda v: chi(profile(v))
    reach = abs(us) + abs(ut) + 12 * max(st, 1e-3)
    left, e1 = integrate.quad(lambda v: float(below(v, us, ss) * below(v, ut, st) * c0(v)), -reach, 0.0,
                              points=sorted({min(us, 0), min(ut, 0)} - {0.0}) or None,
                              epsabs=1e-12, epsrel=1e-10, limit=400)
    right, e2 = integrate.quad(lambda v: float(above(v, us, ss) * above(v, ut, st) * c0(v)), 0.0, reach,
                               points=sorted({max(us, 0), max(ut, 0)} - {0.0}) or None,
                               epsabs=1e-12, epsrel=1e-10, limit=400)
    return left + right, e1 + e2


def _kernel_term(gamma: float, profile: Profile, s: float, t: float, us: float, ut: float,
                 tol: float) -> tuple[float, float]:
    """``(2/gamma) int_0^s dr int p_{s-r}(u_s - v) p_{t-r}(u_t - v) chi(rho(r, v)) dv``.

    The substitution ``r = s - tau^2`` removes the endpoint singularity at s = t.
    """
    if s == 0:
        return 0.0, 0.0

    def f(tau: float) -> float:
        r = s - tau * tau
        vs = 2 * (s - r) / gamma
        vt = 2 * (t - r) / gamma
        if vs + vt == 0:
            return 0.0
        w, m, vc = _gauss_product(us, vs, ut, vt)
        return 2 * tau * w * _chi_along(gamma, profile, r, m, vc)

    val, err = integrate.quad(f, 0.0, math.sqrt(s), epsabs=tol / 10, epsrel=1e-10, limit=200)
    return 2.0 / gamma * val, 2.0 / gamma * err


def theory_current_covariance(gamma: float, profile: Profile, s: float, t: float,
                              tol: float = QUAD_TOL) -> TheoryCovariance:
    """Limiting ``E[J_s J_t]`` for the centred current through the origin over ``sqrt(N)``."""
    _check_times(s, t)
    if s == 0:
        return TheoryCovariance("current-s8", gamma, profile.to_dict(), s, t, 0.0, 0.0)
    a, ea = _static_term(gamma, profile, s, t, 0.0, 0.0)
    b, eb = _kernel_term(gamma, profile, s, t, 0.0, 0.0, tol)
    err = ea + eb
    if err > tol:
        raise ArithmeticError(f"quadrature error estimate {err:.1e} above tolerance {tol:.0e}")
    return TheoryCovariance("current-s8", gamma, profile.to_dict(), s, t, a + b, err,
                            extra={"static": a, "dynamic": b})


def theory_tagged_covariance(gamma: float, profile: Profile, s: float, t: float,
                             centering: Centering | None = None, tol: float = QUAD_TOL,
                             vacuum: float = 1e-3) -> TheoryCovariance:
    """Limiting covariance of ``(X_s - u_s N)/sqrt(N)`` and ``(X_t - u_t N)/sqrt(N)``."""
    _check_times(s, t)
    if s == 0:
        return TheoryCovariance("tagged-t3", gamma, profile.to_dict(), s, t, 0.0, 0.0)
    if centering is None:
        centering = compute_ut(gamma, profile, sorted({0.0, s, t}))
    us, ut = centering(s), centering(t)
    rs = float(rho_continuum(gamma, profile, s, us))
    rt = float(rho_continuum(gamma, profile, t, ut))
    if min(rs, rt) < vacuum:
        raise ArithmeticError("density at the tagged centering is too close to vacuum")
    a, ea = _static_term(gamma, profile, s, t, us, ut)
    b, eb = _kernel_term(gamma, profile, s, t, us, ut, tol)
    err = (ea + eb) / (rs * rt)
    if err > tol:
        raise ArithmeticError(f"quadrature error estimate {err:.1e} above tolerance {tol:.0e}")
    return TheoryCovariance("tagged-t3", gamma, profile.to_dict(), s, t, (a + b) / (rs * rt), err,
                            extra={"u_s": us, "u_t": ut, "rho_s": rs, "rho_t": rt, "W_cov": a + b})


# --------------------------------------------------------------------------
# second route for the current formula


def _ramp_semigroup(u, n: float, sd: float, grad: bool = False):
    """``T G_n`` (or its derivative) for ``G_n(u) = (1 - u/n) 1{0 <= u < n}``."""
    u = np.asarray(u, dtype=float)
    if sd == 0:
        if grad:
            raise ValueError("G_n has a jump at 0")
        return np.where((u >= 0) & (u < n), 1 - u / n, 0.0)
    a = (0 - u) / sd
    b = (n - u) / sd
    mass = special.ndtr(b) - special.ndtr(a)
    if grad:
        return np.exp(-0.5 * a * a) / (sd * math.sqrt(2 * math.pi)) - mass / n
    dens = (np.exp(-0.5 * a * a) - np.exp(-0.5 * b * b)) / math.sqrt(2 * math.pi)
    return (1 - u / n) * mass - sd / n * dens


def _ramp_variance(gamma: float, profile: Profile, s: float, t: float, n: float) -> float:
    """``E[(Y_s(G_n) - Y_0(G_n))(Y_t(G_n) - Y_0(G_n))]`` from the density formula."""
    ss, st = heat_sd(s, gamma), heat_sd(t, gamma)
    G0 = lambda u: _ramp_semigroup(u, n, 0.0)
    static = lambda u: float(chi(profile(u)) * (_ramp_semigroup(u, n, ss) - G0(u))
                             * (_ramp_semigroup(u, n, st) - G0(u)))
    reach = 12 * st + 1.0
    v1 = sum(integrate.quad(static, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
             for lo, hi in ((-reach, 0.0), (0.0, reach), (n - reach, n), (n, n + reach)))

    def dyn(v, tau):
        r = s - tau * tau
        rho = rho_continuum(gamma, profile, r, v)
        return (2 * tau * chi(rho) * _ramp_semigroup(v, n, heat_sd(s - r, gamma), grad=True)
                * _ramp_semigroup(v, n, heat_sd(t - r, gamma), grad=True))

    v2 = 0.0
    if s > 0:
        def over_v(tau):
            r = s - tau * tau
            sd = max(heat_sd(s - r, gamma), 1e-300)
            # the v-integrand concentrates on the scale of the narrower kernel near 0
            pts = [-6 * sd, 0.0, 6 * sd]
            out = 0.0
            edges = [-reach] + pts + [n + reach]
            for lo, hi in zip(edges[:-1], edges[1:]):
                if hi > lo:
                    out += integrate.quad(lambda v: float(dyn(v, tau)), lo, hi, epsabs=1e-13,
                                          epsrel=1e-11, limit=400)[0]
            return out

        v2 = integrate.quad(over_v, 0.0, math.sqrt(s), epsabs=1e-12, epsrel=1e-10, limit=200)[0] * 2.0 / gamma
    return v1 + v2


def current_covariance_by_ramps(gamma: float, profile: Profile, s: float, t: float,
                                ns=(50.0, 100.0, 200.0)) -> dict:
    """The current covariance as the limit of ramp approximations ``G_n``.

    The approximation error is ``a/n + b/n^2 + ...``; the limit is taken by
    Richardson extrapolation over ``ns``.
    """
    vals = np.array([_ramp_variance(gamma, profile, s, t, n) for n in ns])
    inv = 1.0 / np.asarray(ns)
    A = np.vander(inv, len(ns), increasing=True)
    coef = np.linalg.solve(A, vals)
    return {"n": list(ns), "values": vals.tolist(), "limit": float(coef[0])}


def psd_check(matrix: np.ndarray, tol: float = 10 * QUAD_TOL) -> float:
    """Smallest eigenvalue of a symmetric covariance matrix; raises below ``-tol``."""
    lam = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    if lam[0] < -tol:
        raise ArithmeticError(f"covariance matrix not positive semidefinite (eigenvalue {lam[0]:.2e})")
    return float(lam[0])


# --------------------------------------------------------------------------
# shape


def clt_shape_test(samples, theory_variance: float | None = None, level: float = 0.01,
                   lattice: float | None = None, seed: int = 0) -> dict:
    """Gaussianity of standardized samples.

    Kolmogorov-Smirnov distance of the standardized sample to N(0, 1) with the
    Lilliefors correction for estimated mean and variance, plus skewness and
    excess kurtosis with their large-sample standard errors.

    Parameters
    ----------
    lattice : float, optional
        Spacing of lattice-valued samples (tagged displacements, currents).
        The empirical CDF of such samples jumps by about spacing / (sd sqrt(2 pi))
        at each point, which the KS distance detects at large M whatever the
        law. Uniform jitter over one cell, drawn from ``seed``, makes the sample
        continuous with a CDF interpolating the lattice one. Moments are
        reported for the raw sample.
    """
    x = np.asarray(samples, dtype=float)
    M = x.size
    if M < 2000:
        raise ValueError("the shape test needs at least 2000 samples")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("degenerate sample variance")
    zr = (x - x.mean()) / sd
    if lattice is not None:
        if not lattice > 0:
            raise ValueError("lattice spacing must be positive")
        x = x + lattice * (np.random.default_rng(seed).random(M) - 0.5)
    z = (x - x.mean()) / x.std(ddof=1)
    D, p = lilliefors(z, dist="norm", pvalmethod="approx")
    skew = float(np.mean(zr**3))
    kurt = float(np.mean(zr**4) - 3.0)
    out = {
        "M": M,
        "ks_distance": float(D),
        "p_value": float(p),
        "skewness": skew,
        "skewness_se": math.sqrt(6.0 / M),
        "excess_kurtosis": kurt,
        "excess_kurtosis_se": math.sqrt(24.0 / M),
        "passed": bool(p >= level),
        "lattice": lattice,
    }
    if theory_variance is not None:
        out["variance_ratio"] = float(sd**2 / theory_variance)
    return out


def report_json(experiment: str, N: int, M: int, env_seed, mc: float, se: float, theory: float,
                quad_err: float, passed: bool, **extra) -> str:
    return json.dumps({"experiment": experiment, "N": N, "M": M, "env_seed": env_seed, "mc": mc, "se": se,
                       "theory": theory, "quad_err": quad_err, "pass": bool(passed), **extra}, indent=2)
