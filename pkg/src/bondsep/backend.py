"""Selects the compiled event loop when it is importable.

Set ``BONDSEP_BACKEND=python`` to force the pure-Python loop (useful for
checking the two against each other). Both expose ``run_path`` with the same
signature and produce identical trajectories for identical streams.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernel
except ImportError:  # extension not built
    _kernel = None

BACKENDS = {"python": _fallback.run_path}
if _kernel is not None:
    BACKENDS["compiled"] = _kernel.run_path

_requested = os.environ.get("BONDSEP_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"BONDSEP_BACKEND={_requested!r} is not available; have {sorted(BACKENDS)}")

BACKEND = _requested or ("compiled" if "compiled" in BACKENDS else "python")


def run_path_impl(backend: str | None = None):
    """Return the ``run_path`` callable for ``backend`` (default: the active one)."""
    name = backend or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; have {sorted(BACKENDS)}") from None
