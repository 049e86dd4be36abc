"""Spatial weight matrices for areal units."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator
from scipy.spatial.distance import cdist

__all__ = [
    "SpatialWeights",
    "IsolatedUnitsWarning",
    "knn_weights",
    "contiguity_weights",
    "row_standardize",
    "symmetrized_product",
    "read_weights_csv",
    "write_weights_csv",
    "read_edge_list",
]


class IsolatedUnitsWarning(UserWarning):
    """Some units have no neighbours; their rows stay empty."""


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Sparse nonnegative ``n x n`` weights with an empty diagonal.

    ``kind`` is one of ``"knn"``, ``"rook"``, ``"queen"``, ``"bishop"`` or
    ``"custom"``; ``k`` is set for KNN weights.
    """

    matrix: sp.csr_matrix
    kind: str = "custom"
    k: int | None = None
    row_standardized: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=float)
        m.eliminate_zeros()
        m.sort_indices()
        if m.shape[0] != m.shape[1]:
            raise ValueError("weight matrix must be square")
        if m.nnz and m.data.min() < 0:
            raise ValueError("weights must be nonnegative")
        if m.diagonal().any():
            raise ValueError("weight matrix must not have diagonal entries")
        object.__setattr__(self, "matrix", m)

    @property
    def n_units(self) -> int:
        return self.matrix.shape[0]

    @property
    def isolates(self) -> np.ndarray:
        """Indices of units with an empty row."""
        return np.flatnonzero(np.diff(self.matrix.indptr) == 0)

    @property
    def is_symmetric(self) -> bool:
        return abs(self.matrix - self.matrix.T).max() == 0 if self.matrix.nnz else True

    def entries(self) -> dict:
        coo = self.matrix.tocoo()
        return {(int(i), int(j)): float(w) for i, j, w in zip(coo.row, coo.col, coo.data)}

    def neighbors(self, i: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[i]:m.indptr[i + 1]]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def permuted(self, perm) -> "SpatialWeights":
        """Weights after relabelling unit ``perm[i]`` as ``i``."""
        perm = np.asarray(perm)
        return replace(self, matrix=self.matrix[perm][:, perm])


def knn_weights(coords, k: int = 5) -> SpatialWeights:
    """Binary k-nearest-neighbour weights (Euclidean); ties go to the smaller index.

    The result is generally not symmetric and not row-standardized.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    n = coords.shape[0]
    if n < 2:
        raise ValueError("knn weights need at least 2 units")
    if int(k) != k or not 1 <= k <= n - 1:
        raise ValueError(f"k must be an integer in [1, {n - 1}], got {k}")
    k = int(k)
    d = cdist(coords, coords)
    np.fill_diagonal(d, np.inf)
    # stable sort keeps index order among equal distances
    nbrs = np.argsort(d, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    m = sp.csr_matrix((np.ones(n * k), (rows, nbrs.ravel())), shape=(n, n))
    return SpatialWeights(m, kind="knn", k=k)


_OFFSETS = {
    "rook": [(-1, 0), (1, 0), (0, -1), (0, 1)],
    "bishop": [(-1, -1), (-1, 1), (1, -1), (1, 1)],
}
_OFFSETS["queen"] = _OFFSETS["rook"] + _OFFSETS["bishop"]


def contiguity_weights(cells, rule: str = "rook") -> SpatialWeights:
    """Symmetric binary contiguity weights for integer lattice cells ``(row, col)``."""
    if rule not in _OFFSETS:
        raise ValueError(f"unknown contiguity rule {rule!r}; use rook, queen or bishop")
    cells = [tuple(int(v) for v in c) for c in cells]
    index = {}
    for i, c in enumerate(cells):
        if c in index:
            raise ValueError(f"duplicate cell {c}")
        index[c] = i
    rows, cols = [], []
    for i, (r, c) in enumerate(cells):
        for dr, dc in _OFFSETS[rule]:
            j = index.get((r + dr, c + dc))
            if j is not None:
                rows.append(i)
                cols.append(j)
    n = len(cells)
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return SpatialWeights(m, kind=rule)


def lattice_cells(n_rows: int, n_cols: int) -> list[tuple[int, int]]:
    """All cells of an ``n_rows x n_cols`` lattice in row-major order."""
    return [(r, c) for r in range(n_rows) for c in range(n_cols)]


def row_standardize(W: SpatialWeights) -> SpatialWeights:
    """Scale each nonempty row to sum to one; empty rows stay empty.

    Units with empty rows trigger an :class:`IsolatedUnitsWarning` and are
    available afterwards as ``W.isolates``.
    """
    if W.row_standardized:
        return W
    m = W.matrix.copy()
    sums = np.asarray(m.sum(axis=1)).ravel()
    counts = np.diff(m.indptr)
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    m.data *= np.repeat(scale, counts)
    out = replace(W, matrix=m, row_standardized=True)
    if len(out.isolates):
        warnings.warn(
            f"{len(out.isolates)} unit(s) without neighbours: {out.isolates.tolist()[:10]}",
            IsolatedUnitsWarning,
            stacklevel=2,
        )
    return out


def symmetrized_product(W: SpatialWeights) -> LinearOperator:
    """Operator ``v -> (W + W^T) v / 2`` that never forms the dense sum."""
    m = W.matrix
    mt = m.T.tocsr()

    def matvec(v):
        return 0.5 * (m @ v + mt @ v)

    return LinearOperator(m.shape, matvec=matvec, matmat=matvec, rmatvec=matvec, dtype=float)


def read_weights_csv(path, n_units: int) -> SpatialWeights:
    """Read ``i,j,w`` rows (0-based indices)."""
    df = pd.read_csv(path, float_precision="round_trip")
    _check_columns(df, ["i", "j", "w"], path)
    m = sp.csr_matrix(
        (df["w"].to_numpy(float), (df["i"].to_numpy(int), df["j"].to_numpy(int))),
        shape=(n_units, n_units),
    )
    return SpatialWeights(m, kind="custom")


def write_weights_csv(W: SpatialWeights, path) -> None:
    coo = W.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    pd.DataFrame({"i": coo.row[order], "j": coo.col[order], "w": coo.data[order]}).to_csv(
        path, index=False, float_format="%.17g"
    )


def read_edge_list(path, n_units: int) -> SpatialWeights:
    """Read ``i,j`` rows, each implying symmetric binary weights."""
    df = pd.read_csv(path, float_precision="round_trip")
    _check_columns(df, ["i", "j"], path)
    i = df["i"].to_numpy(int)
    j = df["j"].to_numpy(int)
    if np.any(i == j):
        raise ValueError("edge list contains self-loops")
    m = sp.csr_matrix((np.ones(2 * len(i)), (np.r_[i, j], np.r_[j, i])), shape=(n_units, n_units))
    m.data[:] = 1.0  # duplicates summed above
    return SpatialWeights(m, kind="custom")


def _check_columns(df, cols, path):
    missing = set(cols) - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
