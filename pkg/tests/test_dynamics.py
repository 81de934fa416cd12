import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bondsep import backend
from bondsep.dynamics import (Configuration, ObservableBatch, Observables, alias_table,
                              current_conservation_check, init_configuration, mirrored_relation_counterexample,
                              run_replicas, simulate, tagged_vs_current_check)
from bondsep.environment import Environment, LatticeWindow, Law, generate
from bondsep.functions import Profile, TestFunction
from bondsep.pde import solve_discrete
from bondsep.rng import replica_generator
from bondsep.stats import variance_with_se
from bondsep.transform import GridFunction

LAW = Law.uniform(0.25, 0.5)
TANH = Profile.tanh()
FULL = Observables(currents="all", tagged=True, occupations=True)

needs_compiled = pytest.mark.skipif("compiled" not in backend.BACKENDS, reason="extension not built")


def _series(env, seed, engine="thinned", which=None, horizon=0.05, star=True):
    rng = replica_generator(seed, 0)
    config = init_configuration(env, TANH, rng, star=star)
    return simulate(env, config, horizon, np.linspace(0, horizon, 4), FULL, master_seed=seed,
                    bit_generator=rng.bit_generator, rho0=TANH, engine=engine, backend=which)


def test_alias_table_reproduces_weights():
    w = np.array([1.0, 2.0, 3.0, 0.5, 3.5])
    prob, alias = alias_table(w)
    C = w.size
    recovered = prob / C
    for i in range(C):
        recovered[alias[i]] += (1 - prob[i]) / C
    assert np.allclose(recovered, w / w.sum(), atol=1e-14)


def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration(np.array([0, 2, 1]))
    with pytest.raises(ValueError):
        Configuration(np.array([0, 1, 0]), tagged=0)


@needs_compiled
@settings(max_examples=12)
@given(seed=st.integers(0, 2**32), engine=st.sampled_from(["thinned", "tree"]),
       periodic=st.booleans())
def test_backends_bit_identical(seed, engine, periodic):
    w = LatticeWindow(16, -16, 15, "periodic") if periodic else LatticeWindow.symmetric(16, 2.0)
    env = generate(seed % 1000, LAW, w)
    a = _series(env, seed, engine, "compiled")
    b = _series(env, seed, engine, "python")
    assert np.array_equal(a.occupations, b.occupations)
    assert np.array_equal(a.currents, b.currents)
    assert np.array_equal(a.tagged, b.tagged)
    assert a.events == b.events


@settings(max_examples=15)
@given(seed=st.integers(0, 2**32), engine=st.sampled_from(["thinned", "tree"]), periodic=st.booleans())
def test_current_conservation_and_tagged_order(seed, engine, periodic):
    w = LatticeWindow(16, -16, 15, "periodic") if periodic else LatticeWindow.symmetric(16, 2.0)
    env = generate(seed % 1000, LAW, w)
    s = _series(env, seed, engine)
    assert current_conservation_check(s, w)["passed"]
    assert tagged_vs_current_check(s, w)["passed"]


def test_mirrored_relation_is_wrong_somewhere():
    env = generate(1, LAW, LatticeWindow.symmetric(16, 2.0))
    bad = sum(mirrored_relation_counterexample(_series(env, s, horizon=0.2), env.window) for s in range(5))
    assert bad > 0


def test_particle_number_conserved_on_ring(ring_env):
    s = _series(ring_env, 3, horizon=0.3)
    n = s.occupations.sum(axis=1)
    assert np.all(n == s.initial.sum())


def test_empty_and_full_are_frozen(ring_env):
    for fill in (0, 1):
        cfg = Configuration(np.full(ring_env.window.size, fill, dtype=np.uint8))
        s = simulate(ring_env, cfg, 0.2, [0.1, 0.2], Observables(currents="all", occupations=True))
        assert np.all(s.occupations == fill) and np.all(s.currents == 0) and s.changes == 0


def test_sample_time_validation(small_env):
    cfg = init_configuration(small_env, TANH, np.random.default_rng(0))
    with pytest.raises(ValueError):
        simulate(small_env, cfg, 0.1, [0.05, 0.02], rho0=TANH)
    with pytest.raises(ValueError):
        simulate(small_env, cfg, 0.1, [0.2], rho0=TANH)
    with pytest.raises(ValueError):
        simulate(small_env, cfg, 0.1, [0.1])  # reservoirs need the profile


def test_threads_do_not_change_results(small_env):
    a = run_replicas(small_env, TANH, 6, 0.05, [0.05], master_seed=4, threads=1)
    b = run_replicas(small_env, TANH, 6, 0.05, [0.05], master_seed=4, threads=3)
    assert np.array_equal(a.currents, b.currents)


def test_batch_roundtrip_and_merge(tmp_path, small_env):
    G = GridFunction.sample(small_env.window, TestFunction.gaussian(0, 0.25))
    obs = Observables(fields={"g": G}, tagged=True)
    a = run_replicas(small_env, TANH, 3, 0.05, [0.0, 0.05], obs, master_seed=2, star=True)
    b = run_replicas(small_env, TANH, 2, 0.05, [0.0, 0.05], obs, master_seed=2, star=True, first_replica=3)
    both = run_replicas(small_env, TANH, 5, 0.05, [0.0, 0.05], obs, master_seed=2, star=True)
    merged = ObservableBatch.merge([a, b])
    assert np.array_equal(merged.column("pi[g]", 0.05), both.column("pi[g]", 0.05))
    assert np.array_equal(merged.column("X", 0.05), both.column("X", 0.05))
    assert np.all(merged.column("X", 0.0) == 0)
    merged.save(tmp_path / "b.npz")
    back = ObservableBatch.load(tmp_path / "b.npz")
    assert np.array_equal(back.column("J[-1]", 0.05), merged.column("J[-1]", 0.05))
    with pytest.raises(KeyError):
        merged.column("pi[g]", 0.03)


@pytest.mark.parametrize("engine", ["thinned", "tree"])
def test_mean_current_matches_discrete_equation(engine):
    # E J_{-1,0}(t) = N^2 xi_{-1} int_0^t (rho(-1) - rho(0)) ds, with rho from the one-point equation
    env = generate(2, LAW, LatticeWindow.symmetric(16, 2.0))
    t = 0.1
    batch = run_replicas(env, TANH, 2000, t, [t], master_seed=9, engine=engine)
    J = batch.column("J[-1]", t)
    expected = solve_discrete(env, TANH, [0.0, t]).mean_current(-1)[-1]
    assert abs(J.mean() - expected) < 4 * J.std(ddof=1) / math.sqrt(J.size)


def test_engines_agree_in_law():
    env = generate(2, LAW, LatticeWindow.symmetric(16, 2.0))
    t = 0.1
    var = {}
    for engine in ("thinned", "tree"):
        J = run_replicas(env, TANH, 3000, t, [t], master_seed=17, engine=engine).column("J[-1]", t)
        var[engine] = variance_with_se(J)
    (a, sa), (b, sb) = var.values()
    assert abs(a - b) < 4 * math.hypot(sa, sb)


def test_stationary_product_measure_keeps_density(ring_env):
    G = GridFunction.sample(ring_env.window, TestFunction.bump(0.0, 0.5))
    obs = Observables(fields={"g": G})
    batch = run_replicas(ring_env, Profile.constant(0.3), 1000, 0.2, [0.0, 0.2], obs, master_seed=1)
    mean0 = 0.3 * G.values.sum() / ring_env.N
    x = batch.column("pi[g]", 0.2)
    assert abs(x.mean() - mean0) < 4 * x.std(ddof=1) / math.sqrt(x.size)
    # a product measure stays product: the variance does not move either
    v0, v1 = batch.column("pi[g]", 0.0).var(ddof=1), x.var(ddof=1)
    assert abs(v1 / v0 - 1) < 0.2


def test_initial_configuration_extremes(small_env):
    rng = np.random.default_rng(0)
    full = init_configuration(small_env, Profile.constant(1.0), rng)
    assert np.all(full.occupation == 1) and full.tagged is None
    star = init_configuration(small_env, Profile.constant(0.0), rng, star=True)
    i0 = small_env.window.index(0)
    assert star.occupation.sum() == 1 and star.occupation[i0] == 1 and star.tagged == i0
    with pytest.raises(ValueError):
        init_configuration(small_env, lambda u: 1.5 + 0 * u, rng)


def test_initial_particle_count_is_binomial(small_env):
    S, a = small_env.window.size, 0.3
    inside = 0
    for seed in range(1000):
        n = init_configuration(small_env, Profile.constant(a), np.random.default_rng(seed)).occupation.sum()
        inside += abs(n - S * a) <= 3 * math.sqrt(S * a * (1 - a))
    assert inside >= 990


def test_starred_path_at_time_zero(small_env):
    s = _series(small_env, 1)
    assert s.tagged[0] == 0 and np.all(s.currents[0] == 0)


def test_single_particle_variance():
    # xi = 1, one particle: compound Poisson with jump rate 2 N^2, so Var X_t = 2 N^2 t
    w = LatticeWindow.symmetric(16, 3.0)
    env = Environment.from_values(np.ones(w.size + 1), w, epsilon=0.5)
    t = 0.1
    batch = run_replicas(env, Profile.constant(0.0), 5000, t, [t], Observables(tagged=True), master_seed=3, star=True)
    X = batch.column("X", t)
    var, se = variance_with_se(X)
    assert abs(X.mean()) < 3 * X.std(ddof=1) / math.sqrt(X.size)
    assert abs(var - 2 * 16**2 * t) < 3 * se


def test_product_measure_site_means_are_stationary(ring_env):
    a = 0.4
    batch = run_replicas(ring_env, Profile.constant(a), 2000, 0.2, [0.1, 0.2],
                         Observables(fields={f"x{i}": GridFunction(ring_env.window, np.eye(ring_env.window.size)[i],
                                                                   (int(ring_env.window.sites()[i]),) * 2, "indicator")
                                             for i in range(0, ring_env.window.size, 4)}),
                         master_seed=8)
    for name, vals in batch.records.items():
        occ = vals * ring_env.N
        se = np.sqrt(a * (1 - a) / occ.shape[0])
        assert np.all(np.abs(occ.mean(axis=0) - a) < 3.5 * se), name


def test_detailed_balance_of_empirical_transitions():
    # K = 6 periodic ring started from nu_alpha: flows a->b and b->a balance
    w = LatticeWindow(3, -3, 2, "periodic")
    env = generate(2, LAW, w)
    a = 0.5
    batch_occ = []
    for rid in range(3000):
        rng = replica_generator(11, rid)
        cfg = init_configuration(env, Profile.constant(a), rng)
        s = simulate(env, cfg, 0.02, [0.0, 0.02], Observables(occupations=True), bit_generator=rng.bit_generator)
        batch_occ.append(s.occupations)
    occ = np.array(batch_occ)
    code = (occ * (1 << np.arange(6))).sum(axis=2)
    T = np.zeros((64, 64))
    np.add.at(T, (code[:, 0], code[:, 1]), 1)
    off = ~np.eye(64, dtype=bool)
    diff = (T - T.T)[off]
    scale = np.sqrt((T + T.T)[off] + 1)
    assert np.max(np.abs(diff) / scale) < 4.5
