# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled permutation kernels.

Both functions take the weight matrix in CSR form and a ``(P, n)`` array of
permutations; row ``p`` relabels unit ``i`` as ``perms[p, i]``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def moran_numerators(const double[::1] z, const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                     const double[::1] data, const cnp.int64_t[:, ::1] perms):
    """``z[perm] @ W @ z[perm]`` for every permutation."""
    cdef Py_ssize_t P = perms.shape[0], n = perms.shape[1]
    cdef Py_ssize_t p, i, jj
    cdef double acc, row
    out = np.empty(P, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for p in range(P):
            acc = 0.0
            for i in range(n):
                row = 0.0
                for jj in range(indptr[i], indptr[i + 1]):
                    row = row + data[jj] * z[perms[p, indices[jj]]]
                acc = acc + z[perms[p, i]] * row
            res[p] = acc
    return out


def cross_numerators(const double[:, :, ::1] A, const double[:, :, ::1] B,
                     const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                     const double[::1] data, const cnp.int64_t[:, ::1] perms):
    """Pointwise ``sum_k sum_ij w_ij A[k, pi_i, g] B[k, pi_j, g]`` per permutation.

    ``A`` and ``B`` have shape ``(d, n, G)``; the result has shape ``(P, G)``.
    """
    cdef Py_ssize_t P = perms.shape[0], n = perms.shape[1]
    cdef Py_ssize_t d = A.shape[0], G = A.shape[2]
    cdef Py_ssize_t p, i, jj, k, g, pi, pj
    cdef double w
    out = np.zeros((P, G), dtype=np.float64)
    cdef double[:, ::1] res = out
    with nogil:
        for p in range(P):
            for i in range(n):
                pi = perms[p, i]
                for jj in range(indptr[i], indptr[i + 1]):
                    w = data[jj]
                    pj = perms[p, indices[jj]]
                    for k in range(d):
                        for g in range(G):
                            res[p, g] += w * A[k, pi, g] * B[k, pj, g]
    return out
