"""Environment-corrected test functions and the corrected fields.

For a test function sampled on the lattice,

    (T G)(x) = sum_{j < x} xi_j^{-1} [G((j+1)/N) - G(j/N)],

and, with the ramp ``g_l`` rising linearly from 0 to 1 over ``[0, l]``,

    T_l G = T G - (T_{xi,G} / T_{xi,g}) T g_l,

where ``T_{xi,G}`` and ``T_{xi,g}`` are the full sums. ``T_l G`` has compact
support and satisfies ``N xi_x (T G(x+1) - T G(x)) = N (G((x+1)/N) - G(x/N))``,
which turns the disordered generator into a discrete Laplacian.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment, LatticeWindow
from .functions import TestFunction

CLASSES = ("compact-C2", "Schwartz-sampled", "indicator", "ramp")


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A function sampled at ``x/N`` for every site of a window.

    ``support`` is the inclusive site range outside which the values vanish
    (for a ramp, the range where it is not yet constant).
    """

    window: LatticeWindow
    values: np.ndarray = field(repr=False)
    support: tuple[int, int]
    kind: str
    source: TestFunction | None = None
    truncation_radius: float | None = None

    def __post_init__(self):
        if self.kind not in CLASSES:
            raise ValueError(f"unknown grid-function class {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.window.size,):
            raise ValueError("one value per window site is required")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid-function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.window.N

    @classmethod
    def sample(cls, window: LatticeWindow, G: TestFunction) -> "GridFunction":
        """Sample ``G`` on the window, zeroing it outside its (truncated) support."""
        lo, hi = G.support
        N = window.N
        xs = window.sites()
        inside = (xs >= lo * N) & (xs <= hi * N)
        vals = np.where(inside, G(xs / N), 0.0)
        nz = xs[inside]
        support = (int(nz[0]), int(nz[-1])) if nz.size else (0, 0)
        return cls(window, vals, support, G.grid_class, G, G.radius if G.kind == "gaussian" else None)

    @classmethod
    def ramp(cls, window: LatticeWindow, l: float) -> "GridFunction":
        """``g_l(x/N)``: 0 left of the origin, ``u/l`` on ``[0, l)``, 1 beyond."""
        if l <= 0:
            raise ValueError("ramp width must be positive")
        u = window.sites() / window.N
        vals = np.clip(u / l, 0.0, 1.0)
        return cls(window, vals, (0, int(math.ceil(l * window.N))), "ramp")

    @classmethod
    def indicator(cls, window: LatticeWindow, a: float, b: float) -> "GridFunction":
        """Indicator of ``[a, b)`` in macroscopic units."""
        u = window.sites() / window.N
        vals = ((u >= a) & (u < b)).astype(float)
        xs = window.sites()[vals > 0]
        return cls(window, vals, (int(xs[0]), int(xs[-1])) if xs.size else (0, 0), "indicator")

    def inner(self, eta) -> float:
        return float(np.dot(self.values, eta))


def _check_window(env: Environment, G: GridFunction) -> None:
    if G.window != env.window:
        raise ValueError("grid function and environment live on different windows")


def _prefix(env: Environment, values: np.ndarray) -> np.ndarray:
    """``(T G)(x)`` for every site, starting from 0 at ``x_min``."""
    incr = np.diff(values) / env.interior()
    return np.concatenate([[0.0], np.cumsum(incr)])


def apply_T(env: Environment, G: GridFunction) -> tuple[np.ndarray, float]:
    """Per-site values of ``T G`` and the full sum ``T_{xi,G}``.

    Raises
    ------
    ValueError
        If ``G``'s support touches the edge of the window.
    """
    _check_window(env, G)
    w = env.window
    if G.kind != "ramp" and not (w.x_min < G.support[0] and G.support[1] < w.x_max):
        raise ValueError("test-function support touches the window edge")
    T = _prefix(env, G.values)
    return T, float(T[-1])


@dataclass(frozen=True, eq=False)
class TransformedFunction:
    base: GridFunction
    env: Environment = field(repr=False)
    l: float
    values: np.ndarray = field(repr=False)
    T_G: float
    T_g: float
    T_plain: np.ndarray = field(repr=False)

    @property
    def window(self) -> LatticeWindow:
        return self.env.window

    def l1_distance(self, gamma: float | None = None) -> float:
        """``(1/N) sum_x |T_l G(x) - gamma G(x/N)|`` (gamma defaults to the window's)."""
        g = self.env.gamma_hat if gamma is None else gamma
        return float(np.sum(np.abs(self.values - g * self.base.values)) / self.window.N)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(["x", "G", "TG", "TlG"])
            for x, g, t, tl in zip(self.window.sites(), self.base.values, self.T_plain, self.values):
                out.writerow([int(x), repr(float(g)), repr(float(t)), repr(float(tl))])


def apply_Tl(env: Environment, G: GridFunction, l: float) -> TransformedFunction:
    """The corrected transform ``T_l G`` with a ramp of macroscopic width ``l``."""
    if l <= 0:
        raise ValueError("cutoff width must be positive")
    w = env.window
    if math.ceil(l * w.N) >= w.x_max:
        raise ValueError(f"ramp of width {l} does not fit in the window")
    TG, T_G = apply_T(env, G)
    g = GridFunction.ramp(w, l)
    Tg = _prefix(env, g.values)
    T_g = float(Tg[-1])
    if not T_g > 0 or not math.isfinite(T_g):
        raise ValueError("T_{xi,g} must be positive and finite")
    vals = TG - (T_G / T_g) * Tg
    vals.setflags(write=False)
    return TransformedFunction(G, env, float(l), vals, T_G, T_g, TG)


def parse_cutoff(text: str, N: int) -> float:
    """``fixed:<l>`` gives ``l``; ``quarter-power`` gives ``N**0.25`` (macroscopic)."""
    if text == "quarter-power":
        return float(N) ** 0.25
    kind, _, val = text.partition(":")
    if kind != "fixed" or not val:
        raise ValueError(f"cutoff must be 'fixed:<l>' or 'quarter-power', got {text!r}")
    return float(val)


def density_field(G: GridFunction, eta, rho=None) -> tuple[float, float]:
    """``<pi^N, G> = (1/N) sum G eta`` and, given ``rho``, ``Y^N(G) = N^{-1/2} sum G (eta - rho)``."""
    N = G.N
    eta = np.asarray(eta, dtype=float)
    pi = float(np.dot(G.values, eta)) / N
    Y = float(np.dot(G.values, eta - rho)) / math.sqrt(N) if rho is not None else math.nan
    return pi, Y


def corrected_fields(tf: TransformedFunction, eta, rho=None, gamma: float | None = None) -> tuple[float, float]:
    """``X^N(G) = (1/N) sum T_l G eta`` and ``Z^N(G) = (gamma sqrt N)^{-1} sum T_l G (eta - rho)``.

    ``Z`` is NaN when no profile is supplied.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape != tf.values.shape:
        raise ValueError("configuration and transformed function live on different windows")
    if rho is not None and np.shape(rho) != tf.values.shape:
        raise ValueError("profile and transformed function live on different windows")
    g = tf.env.gamma_hat if gamma is None else gamma
    N = tf.window.N
    X = float(np.dot(tf.values, eta)) / N
    Z = float(np.dot(tf.values, eta - rho)) / (g * math.sqrt(N)) if rho is not None else math.nan
    return X, Z
