import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bondsep.environment import Environment, LatticeWindow, Law, gamma_convergence_report, generate
from scipy import integrate


def test_constant_law_gamma_is_exact():
    env = generate(1, Law.constant(2.0), LatticeWindow.symmetric(32, 2.0))
    assert env.gamma_hat == 0.5


def test_uniform_law_gamma_matches_integral():
    law = Law.uniform(0.5, 2.0)
    assert law.mean_inverse() == pytest.approx(math.log(4) / 1.5, abs=1e-14)
    quad, _ = integrate.quad(lambda u: 1 / u / 1.5, 0.5, 2.0)
    assert law.mean_inverse() == pytest.approx(quad, rel=1e-12)
    errs = []
    for N in (64, 1024, 16384):
        env = generate(3, law, LatticeWindow.symmetric(N, 2.0))
        errs.append(abs(env.gamma_hat - law.mean_inverse()))
    assert errs[-1] < 0.01


def test_ellipticity_violation_names_bound():
    with pytest.raises(ValueError, match="lower ellipticity bound"):
        generate(1, Law.uniform(0.0, 1.0), LatticeWindow.symmetric(16, 1.0), epsilon=0.1)
    with pytest.raises(ValueError, match="upper ellipticity bound"):
        generate(1, Law.uniform(1.0, 20.0), LatticeWindow.symmetric(16, 1.0), epsilon=0.1)


def test_window_invariants():
    with pytest.raises(ValueError):
        LatticeWindow(16, 0, 40)
    with pytest.raises(ValueError):
        LatticeWindow(16, -8, 8)  # shorter than 2N
    w = LatticeWindow.symmetric(16, 2.0, "periodic")
    assert w.size >= 64 and w.x_min < 0 < w.x_max


@given(seed=st.integers(0, 2**63 - 1))
def test_regeneration_is_bit_identical_and_elliptic(seed):
    w = LatticeWindow.symmetric(16, 1.5)
    a = generate(seed, Law.uniform(0.25, 0.5), w)
    b = generate(seed, Law.uniform(0.25, 0.5), w)
    assert np.array_equal(a.xi, b.xi)
    assert a.xi.min() >= 0.25 and a.xi.max() <= 0.5


def test_bonds_extend_without_redrawing():
    small = generate(9, Law.uniform(0.25, 0.5), LatticeWindow.symmetric(16, 1.0))
    big = generate(9, Law.uniform(0.25, 0.5), LatticeWindow.symmetric(16, 3.0))
    assert np.array_equal(small.bond(small.bonds()), big.bond(small.bonds()))
    assert small.bond(200) == big.bond(200)


def test_two_point_law_fraction():
    law = Law.two_point(0.5, 2.0, 0.3)
    env = generate(4, law, LatticeWindow.symmetric(2048, 2.0))
    n = env.xi.size
    frac = np.mean(env.xi == 0.5)
    assert abs(frac - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / n)


def test_serialization_roundtrip(tmp_path):
    env = generate(12, Law.uniform(0.25, 0.5), LatticeWindow.symmetric(16, 1.0, "periodic"))
    for values in (False, True):
        path = tmp_path / f"env-{values}.json"
        env.to_json(path, include_values=values)
        back = Environment.from_json(path)
        assert np.array_equal(back.xi, env.xi)
        assert back.window == env.window


def test_load_rejects_non_elliptic_values():
    w = LatticeWindow.symmetric(16, 1.0)
    xi = np.full(w.size + 1, 0.3)
    xi[3] = 0.1
    with pytest.raises(ValueError, match="ellipticity"):
        Environment.from_values(xi, w, epsilon=0.25)


def test_gamma_report_constant_and_empty_block():
    env = generate(1, Law.constant(2.0), LatticeWindow.symmetric(32, 2.0))
    rows = gamma_convergence_report(env, [1, 8, 32])
    assert all(r["right"] == 0.5 and r["left"] == 0.5 for r in rows)
    with pytest.raises(ValueError):
        gamma_convergence_report(env, [0])


def test_gamma_report_decays_like_inverse_sqrt():
    law = Law.uniform(0.25, 0.5)
    g = law.mean_inverse()
    Ks = [16, 64, 256]
    rms = np.zeros(len(Ks))
    seeds = range(120)
    for s in seeds:
        env = generate(s, law, LatticeWindow.symmetric(256, 1.5))
        rows = gamma_convergence_report(env, Ks)
        rms += np.array([(r["right"] - g) ** 2 for r in rows])
    rms = np.sqrt(rms / len(seeds))
    slope = np.polyfit(np.log(Ks), np.log(rms), 1)[0]
    assert -0.65 < slope < -0.35
