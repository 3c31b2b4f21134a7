"""Backend selection for the hot numerical kernels.

At import time the compiled Cython extension is preferred; the pure NumPy
twin is used when the extension is unavailable or when the environment
variable ``FORCHFLOW_FORCE_NUMPY=1`` is set.  Both backends implement the
identical deterministic algorithm and agree to within a few ulps (see
``_kernels_numpy`` for the contract); every report records which backend
produced it.

``scripts/bench_kernels.py`` compares the two backends on representative
workloads.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

BACKEND = "numpy"
_impl = _kernels_numpy

if os.environ.get("FORCHFLOW_FORCE_NUMPY", "") != "1":
    try:
        from . import _kernels_cy  # type: ignore[attr-defined]

        _impl = _kernels_cy
        BACKEND = "cython"
    except ImportError:
        pass

eval_power_law = _impl.eval_power_law
profile_root = _impl.profile_root
N_BISECT = _impl.N_BISECT
N_NEWTON = _impl.N_NEWTON

__all__ = ["BACKEND", "eval_power_law", "profile_root", "N_BISECT", "N_NEWTON"]
