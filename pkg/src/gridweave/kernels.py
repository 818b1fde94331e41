"""Kernel backend selection.

The compiled extension is used when importable; set ``GRIDWEAVE_PURE_PYTHON=1``
to force the numpy fallback. Both backends return identical results.
"""
from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
clear_markets = _pykernels.clear_markets
dp_backward = _pykernels.dp_backward

if os.environ.get("GRIDWEAVE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        clear_markets = _ckernels.clear_markets
        dp_backward = _ckernels.dp_backward

IMP1, IMP2, IMP3, EXP1, EXP2, EXP3 = range(6)

__all__ = ["BACKEND", "clear_markets", "dp_backward", "IMP1", "IMP2", "IMP3", "EXP1", "EXP2", "EXP3"]
