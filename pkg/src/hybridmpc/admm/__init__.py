"""Operator-splitting solver with a compiled iteration loop and a numpy fallback.

Set ``HYBRIDMPC_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import logging
import os

from .solver import (
    AdmmState,
    Residuals,
    SolverError,
    SolverOptions,
    ShiftedGramSolver,
    check_stop,
    init_state,
    penalty_rule,
    psi_matrix,
    residuals,
    step,
    update_penalties,
)
from . import _pykernel

log = logging.getLogger(__name__)

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

_KERNELS = {"python": _pykernel}
if _ckernel is not None:
    _KERNELS["cython"] = _ckernel

_forced = os.environ.get("HYBRIDMPC_BACKEND", "").strip().lower()
if _forced and _forced not in ("python", "cython"):
    log.warning("ignoring unknown HYBRIDMPC_BACKEND=%r", _forced)
    _forced = ""
if _forced == "cython" and _ckernel is None:
    log.warning("compiled kernel requested but not built; using the numpy fallback")
    _forced = "python"
BACKEND = _forced or ("cython" if _ckernel is not None else "python")


def available_backends():
    return sorted(_KERNELS)


def kernel(name=None):
    name = name or BACKEND
    try:
        return name, _KERNELS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None


from .api import solve, write_trace  # noqa: E402

__all__ = [
    "AdmmState", "Residuals", "SolverError", "SolverOptions", "ShiftedGramSolver", "BACKEND",
    "available_backends", "check_stop", "init_state", "kernel", "penalty_rule", "psi_matrix",
    "residuals", "solve", "step", "update_penalties", "write_trace",
]
