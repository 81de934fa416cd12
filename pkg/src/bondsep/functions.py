"""Initial density profiles and continuum test functions.

Both are small immutable descriptors with vectorized evaluation, a first
derivative, and a JSON-able ``to_dict``. Test functions also know how the heat
semigroup of ``gamma^{-1} Delta`` acts on them (closed form for Gaussians,
quadrature otherwise), which the covariance quadratures rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

TRUNCATION = 1e-12


def chi(rho):
    """Static compressibility rho (1 - rho)."""
    return rho * (1.0 - rho)


# --------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class Profile:
    """An initial density profile u -> rho0(u) with values in [0, 1].

    kinds
    -----
    constant : ``alpha``
    tanh     : ``right + (left - right) (1 + tanh(-(u - center)/width)) / 2``;
               the defaults give ``(1 + tanh(-u))/4 + 1/4``
    bump     : ``alpha + beta exp(-u^2 / (2 sigma^2))``
    sine     : ``alpha + beta sin(2 pi u / period)``
    """

    kind: str
    alpha: float = 0.5
    beta: float = 0.0
    sigma: float = 1.0
    center: float = 0.0
    width: float = 1.0
    left: float = 0.75
    right: float = 0.25
    period: float = 2.0

    def __post_init__(self):
        if self.kind not in ("constant", "tanh", "bump", "sine"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        lo, hi = self.bounds()
        if lo < 0 or hi > 1:
            raise ValueError(f"profile {self.kind} takes values outside [0, 1]: [{lo}, {hi}]")

    @classmethod
    def constant(cls, alpha: float) -> "Profile":
        return cls("constant", alpha=float(alpha))

    @classmethod
    def tanh(cls, left: float = 0.75, right: float = 0.25, center: float = 0.0, width: float = 1.0) -> "Profile":
        return cls("tanh", left=float(left), right=float(right), center=float(center), width=float(width))

    @classmethod
    def bump(cls, alpha: float, beta: float, sigma: float) -> "Profile":
        return cls("bump", alpha=float(alpha), beta=float(beta), sigma=float(sigma))

    @classmethod
    def sine(cls, alpha: float, beta: float, period: float = 2.0) -> "Profile":
        return cls("sine", alpha=float(alpha), beta=float(beta), period=float(period))

    @classmethod
    def parse(cls, text: str) -> "Profile":
        """Parse ``constant:0.5``, ``tanh`` / ``tanh:left,right,center,width``,
        ``bump:alpha,beta,sigma`` or ``sine:alpha,beta,period``."""
        kind, _, rest = text.partition(":")
        args = [float(v) for v in rest.split(",") if v.strip()]
        makers = {"constant": cls.constant, "tanh": cls.tanh, "bump": cls.bump, "sine": cls.sine}
        if kind not in makers:
            raise ValueError(f"unknown profile {text!r}")
        return makers[kind](*args)

    def bounds(self) -> tuple[float, float]:
        if self.kind == "constant":
            return self.alpha, self.alpha
        if self.kind == "tanh":
            return min(self.left, self.right), max(self.left, self.right)
        if self.kind == "bump":
            return min(self.alpha, self.alpha + self.beta), max(self.alpha, self.alpha + self.beta)
        return self.alpha - abs(self.beta), self.alpha + abs(self.beta)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.full(u.shape, self.alpha)
        if self.kind == "tanh":
            s = 0.5 * (1.0 + np.tanh(-(u - self.center) / self.width))
            return self.right + (self.left - self.right) * s
        if self.kind == "bump":
            return self.alpha + self.beta * np.exp(-(u * u) / (2 * self.sigma**2))
        return self.alpha + self.beta * np.sin(2 * np.pi * u / self.period)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "constant":
            return np.zeros(u.shape)
        if self.kind == "tanh":
            sech2 = 1.0 / np.cosh((u - self.center) / self.width) ** 2
            return -(self.left - self.right) * 0.5 * sech2 / self.width
        if self.kind == "bump":
            return -self.beta * u / self.sigma**2 * np.exp(-(u * u) / (2 * self.sigma**2))
        k = 2 * np.pi / self.period
        return self.beta * k * np.cos(k * u)

    @property
    def flat(self) -> bool:
        return self.kind == "constant" or self.beta == 0.0 and self.kind in ("bump", "sine")

    def to_dict(self) -> dict:
        keys = {
            "constant": ("alpha",),
            "tanh": ("left", "right", "center", "width"),
            "bump": ("alpha", "beta", "sigma"),
            "sine": ("alpha", "beta", "period"),
        }[self.kind]
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys}}

    @classmethod
    def from_dict(cls, d: dict) -> "Profile":
        d = dict(d)
        return cls(d.pop("kind"), **{k: float(v) for k, v in d.items()})


# --------------------------------------------------------------------------
# test functions

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class TestFunction:
    """A continuum test function G.

    kinds
    -----
    gaussian  : ``amplitude exp(-(u - center)^2 / (2 width^2))`` (Schwartz class;
                truncated where ``|G|`` and ``|G'|`` drop below 1e-12)
    bump      : ``amplitude (1 - ((u - center)/width)^2)^3`` on ``|u - center| < width``
                (compactly supported, C^2)
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    center: float = 0.0
    width: float = 0.25
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "bump"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.width <= 0:
            raise ValueError("width must be positive")

    @classmethod
    def gaussian(cls, center: float = 0.0, width: float = 0.25, amplitude: float = 1.0) -> "TestFunction":
        return cls("gaussian", float(center), float(width), float(amplitude))

    @classmethod
    def bump(cls, center: float = 0.0, width: float = 0.5, amplitude: float = 1.0) -> "TestFunction":
        return cls("bump", float(center), float(width), float(amplitude))

    @classmethod
    def parse(cls, text: str) -> "TestFunction":
        kind, _, rest = text.partition(":")
        args = [float(v) for v in rest.split(",") if v.strip()]
        return {"gaussian": cls.gaussian, "bump": cls.bump}[kind](*args)

    @property
    def grid_class(self) -> str:
        return "Schwartz-sampled" if self.kind == "gaussian" else "compact-C2"

    @property
    def radius(self) -> float:
        """Half-width of the (possibly truncated) support."""
        if self.kind == "bump":
            return self.width
        # |G| and |G'| < 1e-12 beyond the radius; G' = G |z| / width
        a = abs(self.amplitude)
        z = math.sqrt(2 * math.log(max(a, 1e-300) / TRUNCATION)) if a > TRUNCATION else 0.0
        while a * math.exp(-z * z / 2) * max(1.0, z / self.width) >= TRUNCATION:
            z += 0.01
        return z * self.width

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.radius, self.center + self.radius

    def __call__(self, u):
        z = (np.asarray(u, dtype=float) - self.center) / self.width
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-0.5 * z * z)
        return np.where(np.abs(z) < 1, self.amplitude * (1 - z * z) ** 3, 0.0)

    def derivative(self, u):
        z = (np.asarray(u, dtype=float) - self.center) / self.width
        if self.kind == "gaussian":
            return -self.amplitude * z / self.width * np.exp(-0.5 * z * z)
        return np.where(np.abs(z) < 1, -6 * self.amplitude * z * (1 - z * z) ** 2 / self.width, 0.0)

    def integral_product(self, other: "TestFunction") -> float:
        """Closed-form or quadrature value of the integral of G H."""
        if self.kind == other.kind == "gaussian":
            s2 = self.width**2 + other.width**2
            d = self.center - other.center
            return (self.amplitude * other.amplitude * self.width * other.width
                    * math.sqrt(2 * math.pi / s2) * math.exp(-d * d / (2 * s2)))
        lo = max(self.support[0], other.support[0])
        hi = min(self.support[1], other.support[1])
        if hi <= lo:
            return 0.0
        return float(_panel_integral(lambda v: self(v) * other(v), lo, hi, (hi - lo) / 64)[()])

    def semigroup(self, r: float, gamma: float, u, grad: bool = False):
        """``T_r G`` (or its derivative) for the semigroup of ``gamma^{-1} Delta``.

        The kernel is Gaussian with variance ``2 r / gamma``.
        """
        u = np.asarray(u, dtype=float)
        v = 2.0 * r / gamma
        if v <= 0.0:
            return self.derivative(u) if grad else self(u)
        if self.kind == "gaussian":
            s2 = self.width**2 + v
            z = u - self.center
            val = self.amplitude * self.width / np.sqrt(s2) * np.exp(-z * z / (2 * s2))
            return -z / s2 * val if grad else val
        # (d/du) T_r G = T_r G' for the compactly supported bump
        f = self.derivative if grad else self
        lo, hi = self.support
        sd = math.sqrt(v)
        h = min(sd / 2, (hi - lo) / 16)
        kern = lambda w: np.exp(-((u[..., None] - w) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
        return _panel_integral(lambda w: f(w) * kern(w), lo, hi, h)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": self.center, "width": self.width, "amplitude": self.amplitude}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunction":
        return cls(d["kind"], float(d["center"]), float(d["width"]), float(d.get("amplitude", 1.0)))


def _panel_integral(f, lo: float, hi: float, h: float):
    """Composite 16-point Gauss-Legendre rule; ``f`` maps an array of nodes
    (last axis) to values with the same trailing axis."""
    n = max(1, int(math.ceil((hi - lo) / h)))
    edges = np.linspace(lo, hi, n + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return np.sum(f(nodes) * weights, axis=-1)


def normal_sf(x):
    """Standard normal upper tail via erfc (no cancellation for large x)."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
