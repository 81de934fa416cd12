import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bondsep.functions import Profile, TestFunction, chi
from bondsep.stats import (clt_shape_test, current_covariance_by_ramps, estimate_covariance,
                           jackknife_covariance, psd_check, theory_current_covariance,
                           theory_density_covariance, theory_tagged_covariance, variance_with_se)

GAMMA = 4 * math.log(2)
FLAT = Profile.constant(0.5)
TANH = Profile.tanh()


@settings(max_examples=20)
@given(seed=st.integers(0, 10**6), M=st.integers(3, 40), k=st.integers(1, 3))
def test_jackknife_matches_brute_force(seed, M, k):
    X = np.random.default_rng(seed).normal(size=(M, k))
    cov, se = jackknife_covariance(X)
    assert np.allclose(cov, np.cov(X, rowvar=False).reshape(k, k))
    loo = np.array([np.cov(np.delete(X, i, axis=0), rowvar=False).reshape(k, k) for i in range(M)])
    brute = np.sqrt((M - 1) / M * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    assert np.allclose(se, brute, rtol=1e-8, atol=1e-12)


def test_jackknife_se_of_variance_is_calibrated():
    # Var of the sample variance of N(0,1) samples is about 2/M
    x = np.random.default_rng(0).normal(size=20000)
    v, se = variance_with_se(x)
    assert abs(v - 1) < 4 * se
    assert se == pytest.approx(math.sqrt(2 / x.size), rel=0.05)


def test_estimate_rejects_mixed_environments():
    data = {"a": np.arange(10.0), "b": np.arange(10.0) ** 2}
    with pytest.raises(ValueError, match="environment"):
        estimate_covariance(data, env_seeds=[1] * 5 + [2] * 5)
    est = estimate_covariance(data, env_seeds=[7] * 10)
    assert est.env_seed == 7
    assert est.covariance("a", "b")[0] == pytest.approx(np.cov(data["a"], data["b"])[0, 1])
    assert est.var("a")[0] == pytest.approx(np.var(data["a"], ddof=1))


def test_flat_density_covariance_is_heat_semigroup():
    # equilibrium: E[Y_s(G) Y_t(H)] = chi int G T_{t-s} H
    G = TestFunction.gaussian(0.0, 0.25)
    H = TestFunction.gaussian(0.3, 0.2)
    for s, t in [(0.5, 0.5), (0.2, 0.5), (0.0, 0.3)]:
        got = theory_density_covariance(GAMMA, FLAT, s, t, G, H).value
        w2 = H.width**2 + 2 * (t - s) / GAMMA
        TH = TestFunction.gaussian(H.center, math.sqrt(w2), H.width / math.sqrt(w2))
        assert got == pytest.approx(chi(0.5) * G.integral_product(TH), abs=1e-6)


def test_density_covariance_at_time_zero_is_static():
    G = TestFunction.bump(0.1, 0.4)
    got = theory_density_covariance(GAMMA, TANH, 0.0, 0.0, G, G)
    exact, _ = integrate.quad(lambda u: float(chi(TANH(u))) * float(G(u)) ** 2, -0.3, 0.5)
    assert got.value == pytest.approx(exact, abs=1e-7)


def test_flat_current_variance_known_constant():
    for t in (0.25, 0.5, 1.0):
        v = theory_current_covariance(GAMMA, FLAT, t, t).value
        assert v == pytest.approx(chi(0.5) * 2 / math.sqrt(math.pi) * math.sqrt(t / GAMMA), rel=1e-8)
    assert theory_current_covariance(GAMMA, FLAT, 0.0, 0.5).value == 0.0
    with pytest.raises(ValueError):
        theory_current_covariance(GAMMA, FLAT, 0.5, 0.2)


@pytest.mark.parametrize("profile", [FLAT, TANH])
def test_current_formula_agrees_with_ramp_route(profile):
    direct = theory_current_covariance(GAMMA, profile, 0.5, 0.5).value
    ramps = current_covariance_by_ramps(GAMMA, profile, 0.5, 0.5)
    assert abs(direct - ramps["limit"]) < 1e-6


def test_flat_tagged_is_current_over_density_squared():
    a = 0.5
    cur = theory_current_covariance(GAMMA, FLAT, 0.3, 0.5).value
    tag = theory_tagged_covariance(GAMMA, FLAT, 0.3, 0.5)
    assert tag.extra["u_t"] == pytest.approx(0.0, abs=1e-12)
    assert tag.value == pytest.approx(cur / a**2, rel=1e-8)


def test_covariance_matrix_is_psd():
    ts = [0.1, 0.3, 0.5]
    C = np.array([[theory_current_covariance(GAMMA, TANH, min(s, t), max(s, t)).value for t in ts] for s in ts])
    assert psd_check(C) > 0
    with pytest.raises(ArithmeticError):
        psd_check(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_shape_test_calibration():
    rng = np.random.default_rng(3)
    rejections = sum(not clt_shape_test(rng.normal(size=2000))["passed"] for _ in range(100))
    assert rejections <= 5  # level 0.01
    skewed = clt_shape_test(rng.exponential(size=4000), theory_variance=1.0)
    assert not skewed["passed"] and skewed["skewness"] > 5 * skewed["skewness_se"]
    assert skewed["variance_ratio"] == pytest.approx(1.0, abs=0.1)
    with pytest.raises(ValueError):
        clt_shape_test(rng.normal(size=100))
    with pytest.raises(ValueError):
        clt_shape_test(np.ones(3000))


def test_shape_test_on_lattice_samples():
    # rounded normals with sd ~ 11 sites: the raw KS distance sees the lattice steps,
    # the jittered test keeps its level, and a rounded exponential still fails
    rng = np.random.default_rng(5)
    rounded = [np.round(rng.normal(0.3, 11.0, size=5000)) for _ in range(40)]
    assert sum(not clt_shape_test(x)["passed"] for x in rounded) >= 35
    assert sum(not clt_shape_test(x, lattice=1.0, seed=i)["passed"] for i, x in enumerate(rounded)) <= 3
    skewed = clt_shape_test(np.round(rng.exponential(11.0, size=5000)), lattice=1.0)
    assert not skewed["passed"]
    with pytest.raises(ValueError):
        clt_shape_test(np.full(3000, 4.0), lattice=1.0)
    with pytest.raises(ValueError):
        clt_shape_test(rounded[0], lattice=0.0)
