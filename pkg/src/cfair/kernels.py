"""Hot-kernel dispatch.

The compiled ``_ckernels`` extension is used when it has been built and
``CF_PURE_PYTHON`` is not set; otherwise the numpy versions in ``_pykernels``.
``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from cfair import _pykernels

try:
    if os.environ.get("CF_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("CF_PURE_PYTHON is set")
    from cfair import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def available_backends():
    """Mapping of backend name to kernel module, for benchmarks and tests."""
    out = {"python": _pykernels}
    try:
        from cfair import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pair_cosines(G, M):
    return _impl.pair_cosines(_c64(G), _c64(M))


def pair_loss_grad(G, M, T, W):
    return _impl.pair_loss_grad(_c64(G), _c64(M), _c64(T), _c64(W))


def pair_scores(U, ids):
    return _impl.pair_scores(_c64(U), np.ascontiguousarray(ids, dtype=np.int64))
