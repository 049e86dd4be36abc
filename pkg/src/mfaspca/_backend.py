"""Select the compiled kernels when available, else the NumPy fallback.

Set ``MFASPCA_BACKEND=python`` to force the fallback.
"""

import os

import numpy as np

from mfaspca import _pykernels

_requested = os.environ.get("MFASPCA_BACKEND", "auto").lower()

_impl = _pykernels
BACKEND = "python"
if _requested != "python":
    try:
        from mfaspca import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _pykernels


def _csr_arrays(W):
    return (
        np.ascontiguousarray(W.indptr, dtype=np.int64),
        np.ascontiguousarray(W.indices, dtype=np.int64),
        np.ascontiguousarray(W.data, dtype=np.float64),
    )


def moran_numerators(z, W, perms, impl=None):
    """Quadratic forms ``z[perm]' W z[perm]`` for each row of ``perms``.

    ``W`` is a scipy CSR matrix with sorted indices.
    """
    impl = impl or _impl
    return impl.moran_numerators(
        np.ascontiguousarray(z, dtype=np.float64),
        *_csr_arrays(W),
        np.ascontiguousarray(perms, dtype=np.int64),
    )


def cross_numerators(A, B, W, perms, impl=None):
    """Pointwise weighted cross products of permuted curve values, shape ``(P, G)``."""
    impl = impl or _impl
    return impl.cross_numerators(
        np.ascontiguousarray(A, dtype=np.float64),
        np.ascontiguousarray(B, dtype=np.float64),
        *_csr_arrays(W),
        np.ascontiguousarray(perms, dtype=np.int64),
    )
