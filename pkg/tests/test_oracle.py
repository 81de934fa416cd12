import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bondsep.environment import Environment, LatticeWindow, Law, generate
from bondsep.functions import Profile
from bondsep.oracle import (DefinitenessError, check_definite_positive, detailed_balance_defect,
                            exact_hit_probability, harmonic_coordinate, hitting_and_coalescence, liggett_check,
                            master_equation, two_point_ode, walk_kernel)
from bondsep.pde import solve_discrete

LAW = Law.uniform(0.25, 0.5)
TANH = Profile.tanh()


def tiny(seed=0, periodic=False):
    w = LatticeWindow(4, -5, 4, "periodic" if periodic else "frozen-buffer")
    return generate(seed, LAW, w)


@pytest.mark.parametrize("periodic", [False, True])
def test_master_equation_one_point_closes(periodic):
    env = tiny(1, periodic)
    ts = [0.0, 0.05, 0.2]
    law = master_equation(env, ts, TANH)
    assert np.allclose(law.probs.sum(axis=1), 1.0, atol=1e-12)
    traj = solve_discrete(env, TANH, ts)
    for k in range(len(ts)):
        assert np.allclose(law.one_point(k), traj.values[k], atol=1e-10)
    # the mean current agrees with the one-point equation's as well
    i = env.window.index(-1)
    assert np.allclose(law.mean_current(i), traj.mean_current(-1), atol=1e-9)


@pytest.mark.parametrize("periodic", [False, True])
def test_product_measure_is_reversible(periodic):
    assert detailed_balance_defect(tiny(2, periodic), 0.3) < 1e-12


def test_flat_product_law_stays_uncorrelated():
    env = tiny(3)
    law = master_equation(env, [0.0, 0.3], Profile.constant(0.4))
    assert np.max(np.abs(law.two_point(1))) < 1e-12
    assert np.max(np.abs(law.three_point(1))) < 1e-12


@pytest.mark.parametrize("periodic", [False, True])
def test_two_point_hierarchy_matches_exact_law(periodic):
    env = tiny(4, periodic)
    ts = [0.0, 0.05, 0.2]
    law = master_equation(env, ts, TANH)
    tp = two_point_ode(env, TANH, ts, method="ivp", keep=True)
    for k in range(len(ts)):
        assert np.max(np.abs(tp.phi[k] - law.two_point(k))) < 1e-9


def test_two_point_correlations_are_negative_for_step():
    env = tiny(6)
    tp = two_point_ode(env, TANH, [0.0, 0.1], method="ivp", keep=True)
    off = ~np.eye(env.window.size, dtype=bool)
    assert np.all(tp.phi[-1][off] <= 1e-14)
    assert np.all(tp.phi[0] == 0)


def test_implicit_solver_tracks_ivp():
    env = generate(7, LAW, LatticeWindow.symmetric(16, 2.0))
    ts = [0.0, 0.05, 0.1]
    a = two_point_ode(env, TANH, ts, method="ivp", keep=True)
    b = two_point_ode(env, TANH, ts, method="implicit", dt=1e-4, keep=True)
    assert np.max(np.abs(a.phi - b.phi)) < 2e-2 * a.sup
    assert b.iterations


def test_definiteness():
    K = 6
    assert check_definite_positive(np.eye(K)) > 0
    assert check_definite_positive(np.ones((K, K))) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DefinitenessError) as info:
        check_definite_positive(-np.eye(K))
    d = info.value.direction
    assert abs(d.sum()) < 1e-10 and d @ (-np.eye(K)) @ d < 0
    with pytest.raises(ValueError):
        check_definite_positive(np.triu(np.ones((K, K))))


@settings(max_examples=8)
@given(seed=st.integers(0, 10**6))
def test_liggett_inequality_for_gram_matrices(seed):
    env = generate(seed, LAW, LatticeWindow(4, -4, 3, "frozen-buffer"))
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(8, 3))
    rep = liggett_check(env, A @ A.T, [0.1, 1.0])
    assert rep["passed"]


def test_walk_kernel_is_stochastic_and_symmetric():
    env = generate(8, LAW, LatticeWindow.symmetric(16, 2.0))
    k = walk_kernel(env, [0.5, 5.0])
    for P in k.matrices:
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-10)
        assert np.allclose(P, P.T, atol=1e-12)  # generator with symmetric bond rates
    assert np.all(k.diagonal_sup_sqrt_t() > 0)


def test_harmonic_coordinate_constant_environment():
    w = LatticeWindow.symmetric(16, 2.0)
    env = Environment.from_values(np.full(w.size + 1, 0.5), w, epsilon=0.25)
    xs, u = harmonic_coordinate(env, -4, 6)
    assert np.allclose(u, 2.0 * xs)
    assert exact_hit_probability(env, 6, -4) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        exact_hit_probability(env, -1, 3)


def test_hitting_monte_carlo_matches_harmonic_formula():
    env = generate(10, LAW, LatticeWindow.symmetric(16, 2.0))
    rep = hitting_and_coalescence(env, 6, -4, [1.0, 10.0], replicas=4000, seed=2)
    assert abs(rep.mc - rep.exact) < 4 * rep.se
    assert np.all(np.diff(rep.hit_tail) <= 0) and np.all(np.diff(rep.coalescence_tail) <= 0)


def test_single_particle_on_three_site_ring():
    # windows keep the origin strictly inside, so the smallest ring has three sites;
    # a lone walker with unit rates returns with probability 1/3 + (2/3) exp(-3t)
    w = LatticeWindow(1, -1, 1, "periodic")
    env = Environment.from_values(np.ones(4), w, epsilon=0.5)
    ts = np.array([0.0, 0.1, 0.4])
    start = np.zeros(8)
    start[1] = 1.0  # bit 0: the particle sits on site -1
    law = master_equation(env, ts, distribution=start)
    for k, t in enumerate(ts):
        p = law.one_point(k)
        assert p[0] == pytest.approx(1 / 3 + 2 / 3 * np.exp(-3 * t), abs=1e-12)
        assert p.sum() == pytest.approx(1.0)


def test_master_equation_input_validation():
    env = tiny(0)
    with pytest.raises(ValueError):
        master_equation(env, [0.0], distribution=np.ones(2**10))
    with pytest.raises(ValueError):
        master_equation(generate(0, LAW, LatticeWindow(8, -8, 7)), [0.0], TANH)
