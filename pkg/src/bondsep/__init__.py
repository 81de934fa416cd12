"""Symmetric exclusion in a quenched random bond environment.

Kinetic Monte Carlo for the particle system, deterministic solvers for its
mean and two-point functions, and the limiting covariance formulas for the
density field, the current through the origin and a tagged particle.
"""

from importlib.metadata import PackageNotFoundError, version

from .backend import BACKEND
from .environment import Environment, LatticeWindow, Law, generate
from .functions import Profile, TestFunction

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

__all__ = ["BACKEND", "Environment", "LatticeWindow", "Law", "Profile", "TestFunction", "generate",
           "__version__"]
