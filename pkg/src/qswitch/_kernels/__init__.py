"""Backend selection for the hot loops.

The Cython extension ``_core`` is used when it was built; otherwise the
pure-Python module ``_pure`` is used.  Set ``QSWITCH_BACKEND=python`` to force
the fallback.
"""

from __future__ import annotations

import os

from . import _pure

BACKEND = "python"
_impl = _pure

if os.environ.get("QSWITCH_BACKEND", "").lower() != "python":
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not compiled
        pass

policy_sweep = _impl.policy_sweep
greedy_sweep = _impl.greedy_sweep
run_trajectory = _impl.run_trajectory
episode_returns = _impl.episode_returns

__all__ = ["BACKEND", "policy_sweep", "greedy_sweep", "run_trajectory", "episode_returns"]
