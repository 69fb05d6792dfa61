"""Kernel backend selection.

Hot inner loops (pairwise ranking loss/gradient, pairwise distances) exist
twice: a numba ``@njit`` version and a pure-numpy version.  The env var
``FEDREC_BACKEND`` picks one:

    FEDREC_BACKEND=numba   require numba (ImportError if missing)
    FEDREC_BACKEND=numpy   force the pure-numpy path
    unset / auto           numba when importable, numpy otherwise

``fedrec bench`` times the two paths against each other.
"""
from __future__ import annotations

import os

_ENV_VAR = "FEDREC_BACKEND"
_choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"{_ENV_VAR} must be 'numba', 'numpy' or 'auto', got {_choice!r}"
    )

NUMBA_AVAILABLE = False
if _choice in ("auto", "numba"):
    try:
        import numba  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:
        if _choice == "numba":
            raise

USE_NUMBA = NUMBA_AVAILABLE and _choice in ("auto", "numba")


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
