import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bondsep.environment import Environment, LatticeWindow, Law, generate
from bondsep.functions import TestFunction
from bondsep.transform import GridFunction, apply_T, apply_Tl, corrected_fields, density_field, parse_cutoff

G = TestFunction.gaussian(0.0, 0.25)
BUMP = TestFunction.bump(0.2, 0.4)


def const_env(c, N=32, half=3.0):
    w = LatticeWindow.symmetric(N, half)
    return Environment.from_values(np.full(w.size + 1, c), w, epsilon=min(c, 1 / c) * 0.99)


@pytest.mark.parametrize("c", [1.0, 0.5, 2.0])
def test_constant_environment_transform(c):
    env = const_env(c)
    g = GridFunction.sample(env.window, BUMP)
    TG, T_G = apply_T(env, g)
    assert np.allclose(TG, g.values / c, atol=1e-14)
    assert abs(T_G) < 1e-14


@given(seed=st.integers(0, 10**6), center=st.floats(-0.5, 0.5))
def test_summation_by_parts_identity(seed, center):
    env = generate(seed, Law.uniform(0.25, 0.5), LatticeWindow.symmetric(32, 3.0))
    g = GridFunction.sample(env.window, TestFunction.bump(center, 0.5))
    TG, _ = apply_T(env, g)
    N = env.N
    lhs = N * np.diff(TG) * env.interior()
    rhs = N * np.diff(g.values)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_support_touching_edge_rejected():
    env = const_env(1.0, half=1.0)
    vals = np.where(np.abs(env.window.sites() / env.N) < 5, 1.0, 0.0)
    g = GridFunction(env.window, vals, (env.window.x_min, env.window.x_max), "compact-C2")
    with pytest.raises(ValueError, match="edge"):
        apply_T(env, g)


def test_ramp_self_cancels(small_env):
    w = small_env.window
    ramp = GridFunction.ramp(w, 0.5)
    ramp_as_compact = GridFunction(w, ramp.values, ramp.support, "ramp")
    tf = apply_Tl(small_env, ramp_as_compact, 0.5)
    assert np.allclose(tf.values, 0.0, atol=1e-12)


@given(seed=st.integers(0, 10**6))
def test_transformed_function_shape(seed):
    env = generate(seed, Law.uniform(0.25, 0.5), LatticeWindow.symmetric(32, 3.0))
    g = GridFunction.sample(env.window, BUMP)
    tf = apply_Tl(env, g, 0.5)
    xs = env.window.sites()
    lo = g.support[0]
    assert np.all(tf.values[(xs < lo) & (xs <= 0)] == 0.0)
    # identically T G for x <= 0, T G - T_{xi,G} for x >= l N
    assert np.allclose(tf.values[xs <= 0], tf.T_plain[xs <= 0], atol=1e-13)
    far = xs >= math.ceil(0.5 * env.N)
    assert np.allclose(tf.values[far], tf.T_plain[far] - tf.T_G, atol=1e-12)
    assert np.allclose(tf.values[xs > max(g.support[1], 16)], 0.0, atol=1e-12)


def test_sup_bound_between_fields_is_pathwise(small_env):
    rng = np.random.default_rng(0)
    g = GridFunction.sample(small_env.window, G)
    tf = apply_Tl(small_env, g, 0.5)
    bound = tf.l1_distance()
    gh = small_env.gamma_hat
    for _ in range(50):
        eta = (rng.random(small_env.window.size) < rng.random()).astype(float)
        pi, _ = density_field(g, eta)
        X, _ = corrected_fields(tf, eta)
        assert abs(gh * pi - X) <= bound + 1e-12


def test_corrected_fields_trivial_cases():
    env = const_env(1.0)
    g = GridFunction.sample(env.window, G)
    tf = apply_Tl(env, g, 0.5)
    rho = np.full(env.window.size, 0.3)
    X, Z = corrected_fields(tf, np.zeros(env.window.size), rho, gamma=1.0)
    assert X == 0.0
    assert Z == pytest.approx(-np.dot(tf.values, rho) / math.sqrt(env.N))
    eta = (np.arange(env.window.size) % 3 == 0).astype(float)
    X, _ = corrected_fields(tf, eta)
    assert X == pytest.approx(density_field(g, eta)[0], abs=1e-13)
    with pytest.raises(ValueError):
        corrected_fields(tf, eta[:-1])


def test_Z_equals_scaled_Y_of_transform(small_env):
    rng = np.random.default_rng(1)
    g = GridFunction.sample(small_env.window, G)
    tf = apply_Tl(small_env, g, 0.5)
    rho = np.full(small_env.window.size, 0.4)
    eta = (rng.random(small_env.window.size) < 0.4).astype(float)
    _, Z = corrected_fields(tf, eta, rho)
    Y = np.dot(tf.values, eta - rho) / math.sqrt(small_env.N)
    assert Z == pytest.approx(Y / small_env.gamma_hat, rel=1e-12)


def test_l1_distance_decreases_with_N():
    d = []
    Ns = [2**k for k in range(8, 14)]
    for N in Ns:
        env = generate(3, Law.uniform(0.25, 0.5), LatticeWindow.symmetric(N, 2.5))
        d.append(apply_Tl(env, GridFunction.sample(env.window, G), 0.5).l1_distance())
    assert np.polyfit(np.log(Ns), np.log(d), 1)[0] < 0


def test_parse_cutoff():
    assert parse_cutoff("fixed:0.5", 256) == 0.5
    assert parse_cutoff("quarter-power", 256) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        parse_cutoff("half", 256)


def test_transform_csv(tmp_path, small_env):
    tf = apply_Tl(small_env, GridFunction.sample(small_env.window, G), 0.5)
    tf.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "x,G,TG,TlG" and len(lines) == small_env.window.size + 1
