"""Quenched bond environments on a finite lattice window.

Bond ``x`` joins sites ``x`` and ``x + 1`` and carries the conductance
``xi_x``; in the speeded-up dynamics it fires at rate ``N**2 * xi_x``. An
environment stores the bonds ``x_min - 1 .. x_max``: the interior bonds of the
window plus the two boundary bonds, which feed the reservoirs (frozen-buffer
mode) or close the ring (periodic mode, bond ``x_max`` only).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import bond_uniforms

BOUNDARIES = ("periodic", "frozen-buffer")


@dataclass(frozen=True)
class Law:
    """Distribution of a single conductance.

    ``kind`` is ``"constant"`` (value ``a``), ``"uniform"`` (on ``[a, b]``) or
    ``"two-point"`` (``a`` with probability ``p``, else ``b``).
    """

    kind: str
    a: float
    b: float = math.nan
    p: float = math.nan

    def __post_init__(self):
        if self.kind == "constant":
            ok = self.a > 0
        elif self.kind == "uniform":
            ok = 0 <= self.a < self.b
        elif self.kind == "two-point":
            ok = self.a > 0 and self.b > 0 and 0 <= self.p <= 1
        else:
            raise ValueError(f"unknown law kind {self.kind!r}")
        if not ok:
            raise ValueError(f"invalid parameters for {self.kind} law: {self}")

    @classmethod
    def constant(cls, c: float) -> "Law":
        return cls("constant", float(c))

    @classmethod
    def uniform(cls, a: float, b: float) -> "Law":
        return cls("uniform", float(a), float(b))

    @classmethod
    def two_point(cls, a: float, b: float, p: float) -> "Law":
        return cls("two-point", float(a), float(b), float(p))

    @classmethod
    def parse(cls, text: str) -> "Law":
        """Parse ``constant:2``, ``uniform:0.5,2`` or ``two-point:0.5,2,0.3``."""
        kind, _, rest = text.partition(":")
        args = [float(v) for v in rest.split(",") if v.strip()]
        makers = {"constant": cls.constant, "uniform": cls.uniform, "two-point": cls.two_point}
        if kind not in makers:
            raise ValueError(f"unknown law {text!r}")
        return makers[kind](*args)

    def support(self) -> tuple[float, float]:
        if self.kind == "constant":
            return self.a, self.a
        if self.kind == "uniform":
            return self.a, self.b
        return min(self.a, self.b), max(self.a, self.b)

    def mean_inverse(self) -> float:
        """The law's gamma, E[1/xi]."""
        if self.kind == "constant":
            return 1.0 / self.a
        if self.kind == "uniform":
            return math.log(self.b / self.a) / (self.b - self.a) if self.a > 0 else math.inf
        return self.p / self.a + (1.0 - self.p) / self.b

    def quantile(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.full(u.shape, self.a)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        return np.where(u < self.p, self.a, self.b)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "a": self.a}
        if self.kind != "constant":
            d["b"] = self.b
        if self.kind == "two-point":
            d["p"] = self.p
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Law":
        return cls(d["kind"], float(d["a"]), float(d.get("b", math.nan)), float(d.get("p", math.nan)))


@dataclass(frozen=True)
class LatticeWindow:
    """Sites ``x_min .. x_max`` at scale ``N``."""

    N: int
    x_min: int
    x_max: int
    boundary: str = "frozen-buffer"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if not self.x_min < 0 < self.x_max:
            raise ValueError("window must contain the origin strictly inside")
        if self.x_max - self.x_min + 1 < 2 * self.N:
            raise ValueError(f"window has {self.size} sites, fewer than 2N = {2 * self.N}")

    @classmethod
    def symmetric(cls, N: int, half_width: float, boundary: str = "frozen-buffer") -> "LatticeWindow":
        """Window ``[-A N, A N]`` with ``A = max(half_width, 1)`` macroscopic units."""
        A = max(float(half_width), 1.0)
        m = int(math.ceil(A * N))
        return cls(int(N), -m, m, boundary)

    @classmethod
    def for_horizon(cls, N: int, T: float, gamma: float, radius: float = 0.0,
                    boundary: str = "frozen-buffer", spread: float = 3.0) -> "LatticeWindow":
        """Window wide enough for ``spread`` diffusive lengths sqrt(2T/gamma) beyond ``radius``."""
        return cls.symmetric(N, radius + spread * math.sqrt(2.0 * T / gamma), boundary)

    @property
    def size(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    def sites(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)

    def index(self, x) -> np.ndarray | int:
        """Array index of site ``x``."""
        return np.asarray(x) - self.x_min if np.ndim(x) else int(x) - self.x_min

    def to_dict(self) -> dict:
        return {"N": self.N, "x_min": self.x_min, "x_max": self.x_max, "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeWindow":
        return cls(int(d["N"]), int(d["x_min"]), int(d["x_max"]), d.get("boundary", "frozen-buffer"))


@dataclass(frozen=True, eq=False)
class Environment:
    """Conductances on the bonds ``x_min - 1 .. x_max`` of a window.

    ``law`` is ``None`` for environments built from explicit values, which can
    then not be extended beyond the stored bonds.
    """

    seed: int | None
    law: Law | None
    epsilon: float
    window: LatticeWindow
    xi: np.ndarray = field(repr=False)

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.shape != (self.window.size + 1,):
            raise ValueError("need one conductance per bond x_min-1 .. x_max")
        _check_ellipticity(xi, self.epsilon)
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def from_values(cls, xi, window: LatticeWindow, epsilon: float = 0.25) -> "Environment":
        return cls(None, None, float(epsilon), window, np.asarray(xi, dtype=float))

    @property
    def N(self) -> int:
        return self.window.N

    @property
    def gamma_hat(self) -> float:
        """Empirical mean of 1/xi over the stored bonds."""
        return float(np.mean(1.0 / self.xi))

    @property
    def gamma_law(self) -> float:
        return self.law.mean_inverse() if self.law is not None else math.nan

    def gamma(self, which: str = "hat") -> float:
        return self.gamma_hat if which == "hat" else self.gamma_law

    def bonds(self) -> np.ndarray:
        return np.arange(self.window.x_min - 1, self.window.x_max + 1)

    def interior(self) -> np.ndarray:
        """Conductances of bonds ``x_min .. x_max - 1`` (both ends inside the window)."""
        return self.xi[1:-1]

    def bond(self, x) -> np.ndarray | float:
        """Conductance of bond ``x``, regenerated from the seed outside the window."""
        x = np.asarray(x, dtype=np.int64)
        lo = self.window.x_min - 1
        inside = (x >= lo) & (x <= self.window.x_max)
        if np.all(inside):
            out = self.xi[x - lo]
        elif self.law is None:
            raise ValueError("explicit environment has no values outside its window")
        else:
            out = self.law.quantile(bond_uniforms(self.seed, x))
        return float(out) if out.ndim == 0 else out

    def channel_rates(self) -> np.ndarray:
        """Rates ``N**2 xi`` in the kernel's channel order.

        Channels ``0 .. S-2`` are the interior bonds; channel ``S-1`` is the
        wrap bond ``x_max`` (periodic) or the left reservoir bond ``x_min - 1``;
        channel ``S`` is the right reservoir bond ``x_max``.
        """
        n2 = float(self.N) ** 2
        inner = self.interior()
        if self.window.periodic:
            return n2 * np.concatenate([inner, self.xi[-1:]])
        return n2 * np.concatenate([inner, self.xi[:1], self.xi[-1:]])

    def to_dict(self, include_values: bool = False) -> dict:
        d = {
            "seed": self.seed,
            "law": self.law.to_dict() if self.law is not None else None,
            "epsilon": self.epsilon,
            "window": self.window.to_dict(),
            "gamma_hat": self.gamma_hat,
        }
        if include_values or self.law is None:
            d["values"] = self.xi.tolist()
        return d

    def to_json(self, path=None, include_values: bool = False) -> str:
        text = json.dumps(self.to_dict(include_values), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        window = LatticeWindow.from_dict(d["window"])
        eps = float(d["epsilon"])
        if d.get("values") is not None:
            law = Law.from_dict(d["law"]) if d.get("law") else None
            return cls(d.get("seed"), law, eps, window, np.asarray(d["values"], dtype=float))
        return generate(int(d["seed"]), Law.from_dict(d["law"]), window, eps)

    @classmethod
    def from_json(cls, source) -> "Environment":
        """Load from a JSON string or a path to a JSON file."""
        text = str(source)
        if not text.lstrip().startswith("{"):
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def _check_ellipticity(xi: np.ndarray, eps: float) -> None:
    if not 0 < eps < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
    if not np.all(np.isfinite(xi)):
        raise ValueError("conductances must be finite")
    lo, hi = float(xi.min()), float(xi.max())
    if lo < eps:
        raise ValueError(f"conductance {lo} below the lower ellipticity bound epsilon = {eps}")
    if hi > 1.0 / eps:
        raise ValueError(f"conductance {hi} above the upper ellipticity bound 1/epsilon = {1 / eps}")


def generate(seed: int, law: Law, window: LatticeWindow, epsilon: float = 0.25) -> Environment:
    """Draw i.i.d. conductances for the window's bonds from ``law``.

    Raises
    ------
    ValueError
        If the law's support leaves ``[epsilon, 1/epsilon]``.
    """
    lo, hi = law.support()
    if lo < epsilon:
        raise ValueError(f"law support starts at {lo}, below the lower ellipticity bound epsilon = {epsilon}")
    if hi > 1.0 / epsilon:
        raise ValueError(f"law support reaches {hi}, above the upper ellipticity bound 1/epsilon = {1 / epsilon}")
    bonds = np.arange(window.x_min - 1, window.x_max + 1)
    xi = law.quantile(bond_uniforms(seed, bonds))
    return Environment(int(seed), law, float(epsilon), window, xi)


def gamma_convergence_report(env: Environment, block_sizes) -> list[dict]:
    """One-sided block averages of 1/xi to the right and left of the origin.

    For each ``K`` the row holds ``(1/K) sum_{x=1..K} 1/xi_x`` and
    ``(1/K) sum_{x=-K..-1} 1/xi_x``.
    """
    rows = []
    for K in block_sizes:
        K = int(K)
        if K <= 0:
            raise ValueError("block size must be positive")
        if K > env.window.x_max or -K < env.window.x_min - 1:
            raise ValueError(f"block size {K} exceeds the stored bonds")
        right = float(np.mean(1.0 / np.asarray(env.bond(np.arange(1, K + 1)))))
        left = float(np.mean(1.0 / np.asarray(env.bond(np.arange(-K, 0)))))
        rows.append({"K": K, "right": right, "left": left})
    return rows
