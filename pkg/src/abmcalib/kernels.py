"""Backend selection for the hot kernels.

The compiled extension is preferred; set ``ABMCALIB_BACKEND=python`` to force
the numpy fallback (both produce the same results up to floating-point
summation order).
"""

from __future__ import annotations

import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

try:
    if os.environ.get("ABMCALIB_BACKEND", "").lower() == "python":
        raise ImportError("python backend requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError as exc:  # pragma: no cover - depends on build
    log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
    _impl = _fallback
    BACKEND = "python"

simulate_batch = _impl.simulate_batch
marginal_fixed = _impl.marginal_fixed
loglik_individual = _impl.loglik_individual
marginal_meanfield = _impl.marginal_meanfield


def available_backends() -> dict:
    out = {"python": _fallback}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:  # pragma: no cover
        pass
    return out
