"""NumPy versions of the permutation kernels in ``_ckernels.pyx``."""

import numpy as np
import scipy.sparse as sp


def _csr(indptr, indices, data):
    n = len(indptr) - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def moran_numerators(z, indptr, indices, data, perms):
    W = _csr(indptr, indices, data)
    Z = np.asarray(z)[perms].T  # (n, P)
    return np.einsum("ip,ip->p", Z, W @ Z)


def cross_numerators(A, B, indptr, indices, data, perms):
    W = _csr(indptr, indices, data)
    d, n, G = A.shape
    flat_a = A.transpose(1, 0, 2).reshape(n, d * G)
    flat_b = B.transpose(1, 0, 2).reshape(n, d * G)
    out = np.empty((len(perms), G))
    for p, perm in enumerate(perms):
        prod = flat_a[perm] * (W @ flat_b[perm])
        out[p] = prod.sum(axis=0).reshape(d, G).sum(axis=0)
    return out
