"""Spatial and classical multivariate functional PCA on areal units.

Both analyses operate on the orthonormal score matrix ``X`` (see
:func:`mfaspca.basis.orthonormal_scores`), where the L2 geometry of the
curves is plain Euclidean geometry. Loadings are mapped back to raw B-spline
coefficients to give the eigenfunctions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from mfaspca.basis import FunctionalSample, orthonormal_scores
from mfaspca.moran import _weights_csr

__all__ = [
    "DegenerateSampleError",
    "SpcaResult",
    "FpcaResult",
    "mfaspca",
    "mfpca",
    "variance_explained",
    "reconstruct",
    "reconstruct_coefs",
    "score_table",
]

# eigenvalues below this fraction of the largest magnitude are treated as zero
ZERO_EIG = 1e-12


class DegenerateSampleError(ValueError):
    """The centered sample has no variability."""


@dataclass
class _Components:
    eigenvalues: np.ndarray
    loadings: np.ndarray
    scores: np.ndarray
    eigenfn_coefs: list
    var_explained: np.ndarray
    score_var_explained: np.ndarray
    all_eigenvalues: np.ndarray
    total_variance: float
    bases: tuple = field(repr=False)
    unit_ids: tuple = field(repr=False)

    @property
    def n_components(self) -> int:
        return len(self.eigenvalues)

    def eigenfunctions(self, variable: int, abscissae) -> np.ndarray:
        """Eigenfunction values of one variable, shape ``(n_components, len(abscissae))``."""
        B = self.bases[variable].design(abscissae)
        return (B @ self.eigenfn_coefs[variable]).T


@dataclass
class SpcaResult(_Components):
    """Kept mfasPCA components, ordered by ``|eigenvalue|`` (positives first at ties).

    ``signs`` holds +1 for global (positive) and -1 for local (negative)
    components. ``var_explained`` is ``|eigenvalue|`` as a percentage of the
    summed magnitudes of all eigenvalues with the same sign;
    ``score_var_explained`` is the score variance as a percentage of the
    total functional variance.
    """

    signs: np.ndarray = None
    score_moran: np.ndarray = None
    n_pos_kept: int = 0
    n_neg_kept: int = 0

    def sign_rank(self) -> list[tuple[int, int]]:
        """``(sign, rank within sign)`` per component, e.g. ``(+1, 1)`` for the first positive."""
        seen = {1: 0, -1: 0}
        out = []
        for s in self.signs:
            seen[int(s)] += 1
            out.append((int(s), seen[int(s)]))
        return out


@dataclass
class FpcaResult(_Components):
    """Leading eigenpairs of the covariance operator."""


def _fix_signs(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U), axis=0)
    flip = np.sign(U[idx, np.arange(U.shape[1])])
    flip[flip == 0] = 1.0
    return U * flip


def _eigenfn_coefs(sample: FunctionalSample, U: np.ndarray) -> list:
    out, start = [], 0
    for b in sample.bases:
        block = U[start:start + b.n_basis]
        out.append(solve_triangular(b.orth_factor, block, lower=False))
        start += b.n_basis
    return out


def _prepare(sample: FunctionalSample):
    if not sample.centered:
        raise ValueError("sample must be centered; call center() first")
    X = orthonormal_scores(sample)
    total = float(np.sum(X * X) / X.shape[0])
    if not total > 0:
        raise DegenerateSampleError("centered sample is identically zero")
    return X, total


def mfaspca(
    sample: FunctionalSample,
    W,
    n_pos: int = 3,
    n_neg: int = 2,
    standardize: bool = True,
) -> SpcaResult:
    """Multivariate functional areal spatial PCA.

    Eigen-decomposes ``H = X'(W + W')X / (2n)`` and keeps up to ``n_pos``
    largest positive and ``n_neg`` smallest negative eigenpairs. Each kept
    eigenvalue equals ``var(chi_k) * I(chi_k)`` for the score ``chi_k = X u_k``.
    """
    X, total = _prepare(sample)
    n, p = X.shape
    if n_pos < 0 or n_neg < 0:
        raise ValueError("n_pos and n_neg must be nonnegative")
    if n_pos + n_neg > p:
        raise ValueError(f"n_pos + n_neg = {n_pos + n_neg} exceeds p = {p}")
    m = _weights_csr(W, standardize)
    if m.shape[0] != n:
        raise ValueError(f"W has {m.shape[0]} units, sample has {n}")

    WX = m @ X
    H = (X.T @ WX + WX.T @ X) / (2.0 * n)
    vals, vecs = np.linalg.eigh(H)
    vals, vecs = vals[::-1], vecs[:, ::-1]

    tol = ZERO_EIG * np.abs(vals).max()
    pos = [i for i in range(min(n_pos, p)) if vals[i] > tol]
    neg = [i for i in range(p - 1, p - 1 - n_neg, -1) if vals[i] < -tol]
    # magnitudes equal to 12 significant digits count as ties
    mags = np.round(np.abs(vals) / np.abs(vals).max(), 12)
    keep = sorted(pos + neg, key=lambda i: (-mags[i], vals[i] < 0))
    keep = np.array(keep, dtype=int)

    U = _fix_signs(vecs[:, keep])
    chi = X @ U
    ss = np.einsum("ik,ik->k", chi, chi)
    with np.errstate(invalid="ignore", divide="ignore"):
        moran = np.einsum("ik,ik->k", chi, m @ chi) / ss
    alpha = vals[keep]
    pos_sum = vals[vals > tol].sum()
    neg_sum = -vals[vals < -tol].sum()
    share = np.abs(alpha) / np.where(alpha > 0, pos_sum or 1.0, neg_sum or 1.0) * 100.0
    return SpcaResult(
        eigenvalues=alpha,
        loadings=U,
        scores=chi,
        eigenfn_coefs=_eigenfn_coefs(sample, U),
        var_explained=share,
        score_var_explained=100.0 * (ss / n) / total,
        all_eigenvalues=vals,
        total_variance=total,
        bases=sample.bases,
        unit_ids=sample.unit_ids,
        signs=np.where(alpha > 0, 1, -1),
        score_moran=moran,
        n_pos_kept=len(pos),
        n_neg_kept=len(neg),
    )


def mfpca(sample: FunctionalSample, n_comp: int | None = None) -> FpcaResult:
    """Classical multivariate functional PCA (eigenpairs of ``X'X / n``)."""
    X, total = _prepare(sample)
    n, p = X.shape
    n_comp = p if n_comp is None else n_comp
    if not 0 <= n_comp <= p:
        raise ValueError(f"n_comp must be in [0, {p}]")
    vals, vecs = np.linalg.eigh(X.T @ X / n)
    vals, vecs = np.clip(vals[::-1], 0.0, None), vecs[:, ::-1]
    U = _fix_signs(vecs[:, :n_comp])
    chi = X @ U
    return FpcaResult(
        eigenvalues=vals[:n_comp],
        loadings=U,
        scores=chi,
        eigenfn_coefs=_eigenfn_coefs(sample, U),
        var_explained=100.0 * vals[:n_comp] / vals.sum(),
        score_var_explained=100.0 * np.einsum("ik,ik->k", chi, chi) / n / total,
        all_eigenvalues=vals,
        total_variance=total,
        bases=sample.bases,
        unit_ids=sample.unit_ids,
    )


def variance_explained(result, total_variance: float | None = None) -> np.ndarray:
    """Percentage ``100 * var(chi_k) / total_variance`` for each component score."""
    total = result.total_variance if total_variance is None else total_variance
    if not total > 0:
        raise ValueError("total variance must be positive")
    chi = result.scores
    return 100.0 * np.einsum("ik,ik->k", chi, chi) / chi.shape[0] / total


def reconstruct_coefs(mean_coefs, result, K: int) -> list[np.ndarray]:
    """Raw coefficients of ``mean + sum_{k<=K} score_k * eigenfunction_k`` per variable."""
    if not 0 <= K <= result.n_components:
        raise ValueError(f"K must be in [0, {result.n_components}]")
    chi = result.scores[:, :K]
    return [m[None, :] + chi @ E[:, :K].T for m, E in zip(mean_coefs, result.eigenfn_coefs)]


def reconstruct(mean_coefs, result, K: int, abscissae) -> list[np.ndarray]:
    """Reconstructed curves per variable, each of shape ``(n_units, G_j)``.

    ``abscissae`` is one array shared by all variables or a list with one
    array per variable.
    """
    coefs = reconstruct_coefs(mean_coefs, result, K)
    d = len(coefs)
    if isinstance(abscissae, (list, tuple)) and len(abscissae) == d and np.ndim(abscissae[0]) == 1:
        grids = abscissae
    else:
        grids = [abscissae] * d
    return [c @ b.design(g).T for c, b, g in zip(coefs, result.bases, grids)]


def score_table(result, coords) -> pd.DataFrame:
    """Long table ``unit, s1, s2, component, score, abs_score, sign`` for score maps."""
    coords = np.asarray(coords, dtype=float)
    n = result.scores.shape[0]
    if coords.shape != (n, 2):
        raise ValueError(f"need {n} coordinate pairs, got shape {coords.shape}")
    K = result.n_components
    score = result.scores.T.ravel()
    return pd.DataFrame(
        {
            "unit": np.tile(np.asarray(result.unit_ids, dtype=object), K),
            "s1": np.tile(coords[:, 0], K),
            "s2": np.tile(coords[:, 1], K),
            "component": np.repeat(np.arange(1, K + 1), n),
            "score": score,
            "abs_score": np.abs(score),
            "sign": np.where(score > 0, "positive", np.where(score < 0, "negative", "zero")),
        }
    )
