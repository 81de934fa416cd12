import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bondsep.environment import Environment, LatticeWindow, Law, generate
from bondsep.functions import Profile, TestFunction
from bondsep.pde import (compute_ut, compute_utN, gradient_bound_check, heat_sd, mean_flux,
                         partial_sum_extension, rho_continuum, solve_discrete, solve_heat, weak_pairing)

LAW = Law.uniform(0.25, 0.5)
TANH = Profile.tanh()


def test_constant_profile_is_stationary(small_env):
    traj = solve_discrete(small_env, Profile.constant(0.3), [0.0, 0.1, 0.5])
    assert np.allclose(traj.values, 0.3, atol=1e-12)
    assert np.allclose(traj.mean_current(-1), 0.0, atol=1e-10)


def test_heat_flow_of_sine_closed_form():
    # E sin(k(u + sd Z)) = sin(k u) exp(-k^2 sd^2 / 2) with sd^2 = 2t/gamma
    prof = Profile.sine(0.5, 0.3, 2.0)
    g, t = 2.0, 0.3
    u = np.linspace(-1, 1, 9)
    k = math.pi
    exact = 0.5 + 0.3 * np.sin(k * u) * math.exp(-k * k * t / g)
    assert np.allclose(rho_continuum(g, prof, t, u), exact, atol=1e-12)
    assert heat_sd(t, g) == pytest.approx(math.sqrt(2 * t / g))


def test_heat_solution_solves_pde():
    g = 2.7
    sol = solve_heat(g, TANH, [0.2, 0.2 + 1e-5], np.linspace(-1, 1, 5))
    dt = (sol.rho[1] - sol.rho[0]) / 1e-5
    h = 1e-3
    lap = (rho_continuum(g, TANH, 0.2, sol.u + h) - 2 * sol.rho[0] + rho_continuum(g, TANH, 0.2, sol.u - h)) / h**2
    assert np.allclose(dt, lap / g, atol=1e-4)


def test_weak_pairing_at_zero_and_flux_of_flat():
    G = TestFunction.gaussian(0.0, 0.25)
    direct, _ = integrate.quad(lambda u: float(TANH(u)) * float(G(u)), -3, 3)
    assert weak_pairing(2.0, TANH, 0.0, G) == pytest.approx(direct, abs=1e-9)
    assert abs(mean_flux(2.0, Profile.constant(0.4), 0.5)) < 1e-14


@pytest.mark.parametrize("t", [0.1, 0.5])
def test_centering_ode_and_root_agree(t):
    c = compute_ut(4 * math.log(2), TANH, [0.0, t])
    assert c.max_diff < 1e-8
    assert c(t) > 0  # mass moves from the dense left side to the right


def test_solvers_agree():
    env = generate(3, LAW, LatticeWindow.symmetric(32, 3.0))
    ts = [0.0, 0.05, 0.2]
    a = solve_discrete(env, TANH, ts, method="uniformization")
    b = solve_discrete(env, TANH, ts, method="spectral")
    c = solve_discrete(env, TANH, ts, method="explicit", step=1e-5)
    assert np.max(np.abs(a.values - b.values)) < 1e-9
    assert np.max(np.abs(a.values - c.values)) < 1e-7
    assert np.max(np.abs(a.integrals - b.integrals)) < 1e-9


def test_periodic_mass_conserved(ring_env):
    traj = solve_discrete(ring_env, Profile.sine(0.5, 0.3, 2.0), [0.0, 0.1, 0.3])
    mass = traj.values.sum(axis=1)
    assert np.allclose(mass, mass[0], rtol=1e-10)


def test_discrete_converges_to_continuum():
    t, errs = 0.2, []
    for N in (32, 64, 128):
        env = generate(11, LAW, LatticeWindow.symmetric(N, 4.0))
        traj = solve_discrete(env, TANH, [t])
        u = env.window.sites() / N
        inner = np.abs(u) <= 1
        exact = rho_continuum(env.gamma_hat, TANH, t, u[inner])
        errs.append(np.max(np.abs(traj.values[-1][inner] - exact)))
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.05


@settings(max_examples=10)
@given(seed=st.integers(0, 10**6))
def test_gradient_bound(seed):
    env = generate(seed, LAW, LatticeWindow.symmetric(32, 3.0))
    traj = solve_discrete(env, TANH, np.linspace(0, 0.3, 7))
    rep = gradient_bound_check(env, traj)
    assert rep["passed"] and rep["ratio"] <= rep["ratio_bound"]


def test_partial_sum_extension():
    w = LatticeWindow(16, -3, 34)
    vals = np.arange(w.size, dtype=float)
    sites, S = partial_sum_extension(vals, w)
    i0 = w.index(0)
    assert S[list(sites).index(-1)] == 0.0
    assert S[list(sites).index(0)] == vals[i0]
    assert S[list(sites).index(-2)] == -vals[i0 - 1]


def test_utN_starts_at_zero_and_follows_ut():
    N = 128
    env = generate(5, LAW, LatticeWindow.symmetric(N, 3.0))
    traj = solve_discrete(env, TANH, [0.0, 0.5], starred=True)
    assert compute_utN(env, traj, 0.0) == 0
    u = compute_ut(env.gamma_hat, TANH, [0.0, 0.5])(0.5)
    assert abs(compute_utN(env, traj, 0.5) / N - u) < 0.03
    with pytest.raises(ValueError):
        compute_utN(env, solve_discrete(env, TANH, [0.5]), 0.5)


def test_flat_profile_trivial_cases(small_env):
    flat = Profile.constant(0.35)
    assert np.allclose(rho_continuum(2.0, flat, 0.7, np.linspace(-1, 1, 5)), 0.35, atol=1e-14)
    assert np.all(compute_ut(2.0, flat, [0.0, 0.3, 0.6]).u_ode == 0)
    rep = gradient_bound_check(small_env, solve_discrete(small_env, flat, [0.0, 0.2]))
    assert rep["sup_grad"] < 1e-12


def test_semigroup_at_zero_is_identity():
    for G in (TestFunction.gaussian(0.1, 0.3), TestFunction.bump(0.0, 0.5)):
        u = np.linspace(-1, 1, 11)
        assert np.array_equal(G.semigroup(0.0, 2.0, u), G(u))


def test_gaussian_bump_spreads_in_closed_form():
    # rho0 = a + b exp(-u^2/(2 s^2)) -> a + b s/sqrt(s^2 + v) exp(-u^2/(2(s^2 + v))), v = 2t/gamma
    a, b, s, g, t = 0.4, 0.1, 0.2, 2.7, 0.15
    prof = Profile.bump(a, b, s)
    u = np.linspace(-1, 1, 21)
    v = 2 * t / g
    exact = a + b * s / np.sqrt(s**2 + v) * np.exp(-u**2 / (2 * (s**2 + v)))
    assert np.max(np.abs(rho_continuum(g, prof, t, u) - exact)) <= 1e-6


def test_unit_conductance_gradients_contract():
    w = LatticeWindow.symmetric(32, 3.0, "periodic")
    env = Environment.from_values(np.ones(w.size + 1), w, epsilon=0.5)
    traj = solve_discrete(env, Profile.sine(0.5, 0.3, 2.0), np.linspace(0, 0.3, 10))
    assert gradient_bound_check(env, traj)["grad_nonincreasing"]


@settings(max_examples=10)
@given(seed=st.integers(0, 10**6))
def test_maximum_principle(seed):
    env = generate(seed, LAW, LatticeWindow.symmetric(32, 3.0))
    traj = solve_discrete(env, TANH, np.linspace(0, 0.5, 6))
    lo, hi = traj.values[0].min(), traj.values[0].max()
    assert np.all(traj.values >= lo - 1e-12) and np.all(traj.values <= hi + 1e-12)


def test_mean_current_matches_integrated_flux():
    # flux accumulated by the same propagator: dJ/dt = N^2 xi (rho(-1) - rho(0))
    env = generate(4, LAW, LatticeWindow.symmetric(32, 3.0))
    ts = np.linspace(0, 0.1, 2001)
    traj = solve_discrete(env, TANH, ts)
    i = env.window.index(-1)
    rate = env.N**2 * env.bond(-1) * (traj.values[:, i] - traj.values[:, i + 1])
    assert traj.mean_current(-1)[-1] == pytest.approx(integrate.simpson(rate, x=ts), rel=1e-7)
