"""Simulated spatially autocorrelated functional data and replicated comparisons.

Curves follow ``X_i(t) = t * a_i + u_i(t)`` with ``a_i ~ U(-3, 3)`` and ``u_i``
a Gaussian process with exponential covariance. Spatial dependence comes
from the SAR equation ``Y(t) = rho W Y(t) + X(t)``, solved exactly at every
time point with the row-standardized ``W``.
"""

from __future__ import annotations

import configparser
import dataclasses
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve

from mfaspca.basis import ObservationPanel, center, make_basis, smooth
from mfaspca.moran import moran_test, trace_moran
from mfaspca.spca import mfaspca, mfpca
from mfaspca.weights import (
    IsolatedUnitsWarning,
    SpatialWeights,
    contiguity_weights,
    knn_weights,
    row_standardize,
)

__all__ = [
    "SimConfig",
    "gp_sample",
    "sar_solve",
    "model1",
    "multivariate_sar",
    "simulate",
    "build_weights",
    "run_experiment",
    "summarize_experiment",
    "EXPERIMENT_COLUMNS",
]

EXPERIMENT_COLUMNS = ["replicate", "method", "component", "sign", "var_explained", "score_moran", "p_value"]


@dataclass
class SimConfig:
    """Simulation settings.

    Units are placed without replacement on a ``grid_side x grid_cols``
    lattice (``grid_cols`` defaults to ``grid_side``); when ``n_units`` equals
    the lattice size every cell is used. ``model`` is ``"model1"`` (no
    additive white noise) or ``"sar"``.
    """

    n_units: int = 100
    grid_side: int = 50
    grid_cols: int | None = None
    d_vars: int = 1
    n_timepoints: int = 101
    rho: float = 0.5
    weight_spec: str = "knn:5"
    gp_lengthscale: float = 0.1
    gp_variance: float = 1.0
    noise_sd: float = 0.1
    n_replicates: int = 50
    seed: int = 0
    model: str = "sar"
    n_basis: int = 10
    order: int = 4
    n_pos: int = 3
    n_neg: int = 3
    n_permutations: int = 999

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1) for row-standardized weights")
        if self.n_units > self.n_cells:
            raise ValueError(f"n_units {self.n_units} exceeds lattice size {self.n_cells}")
        if self.model not in ("model1", "sar"):
            raise ValueError("model must be 'model1' or 'sar'")
        if self.model == "model1" and self.d_vars != 1:
            raise ValueError("model1 is univariate (d_vars = 1)")
        if self.gp_lengthscale <= 0 or self.gp_variance < 0 or self.noise_sd < 0:
            raise ValueError("gp_lengthscale must be > 0; gp_variance and noise_sd >= 0")
        if self.n_replicates < 0:
            raise ValueError("n_replicates must be >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid_side, self.grid_cols or self.grid_side

    @property
    def n_cells(self) -> int:
        r, c = self.shape
        return r * c

    @classmethod
    def from_file(cls, path, **overrides) -> "SimConfig":
        """Read flat ``key = value`` lines; unknown keys are an error."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.read_string("[sim]\n" + Path(path).read_text(encoding="utf-8"))
        return cls.from_mapping(dict(parser["sim"]), **overrides)

    @classmethod
    def from_mapping(cls, values: dict, **overrides) -> "SimConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in {**values, **overrides}.items():
            if key not in types:
                raise ValueError(f"unknown simulation setting {key!r}")
            if raw is None or raw == "":
                continue
            kind = types[key]
            if "int" in kind and "None" in kind and str(raw).lower() == "none":
                kwargs[key] = None
            elif kind.startswith("int"):
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = str(raw)
        return cls(**kwargs)


def gp_sample(grid, lengthscale: float, variance: float, rng, size: int | None = None) -> np.ndarray:
    """Draw from a zero-mean GP with covariance ``variance * exp(-|t - u| / lengthscale)``.

    Returns shape ``(len(grid),)`` or ``(size, len(grid))``.
    """
    if lengthscale <= 0 or variance <= 0:
        raise ValueError("lengthscale and variance must be positive")
    t = np.asarray(grid, dtype=float)
    K = variance * np.exp(-np.abs(t[:, None] - t[None, :]) / lengthscale)
    # jitter relative to the variance keeps tiny-variance draws tiny
    K[np.diag_indices_from(K)] += 1e-10 * variance
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise ValueError("GP covariance is not positive definite on this grid") from None
    z = rng.standard_normal((len(t), 1 if size is None else size))
    draws = (L @ z).T
    return draws[0] if size is None else draws


def sar_solve(W, X: np.ndarray, rho: float) -> np.ndarray:
    """Solve ``(I - rho W) Y = X`` for all columns of ``X`` (one per time point)."""
    m = W.matrix if isinstance(W, SpatialWeights) else sp.csr_matrix(W)
    n = m.shape[0]
    A = np.eye(n) - rho * m.toarray()
    lu, piv = lu_factor(A, check_finite=True)
    if np.min(np.abs(np.diag(lu))) <= 1e-14 * np.max(np.abs(np.diag(lu))):
        raise ValueError("I - rho W is singular")
    return lu_solve((lu, piv), X)


def build_weights(spec: str, cells: np.ndarray) -> SpatialWeights:
    """Weights from ``knn:<k>``, ``rook``, ``queen`` or ``bishop`` on lattice cells."""
    spec = spec.strip().lower()
    if spec.startswith("knn"):
        _, _, k = spec.partition(":")
        return knn_weights(cells, int(k) if k else 5)
    if spec in ("rook", "queen", "bishop"):
        return contiguity_weights(cells, spec)
    raise ValueError(f"unsupported weight spec {spec!r} for simulation")


def _place_units(config: SimConfig, rng) -> np.ndarray:
    rows, cols = config.shape
    chosen = np.sort(rng.choice(rows * cols, size=config.n_units, replace=False))
    return np.column_stack([chosen // cols, chosen % cols])


def simulate(config: SimConfig, rng, noise_sd: float | None = None):
    """Simulate ``d_vars`` SAR curves; returns ``(Y, t, cells, W)``.

    ``Y`` has shape ``(d_vars, n_units, n_timepoints)``; ``W`` is the
    unstandardized weight matrix.
    """
    noise_sd = config.noise_sd if noise_sd is None else noise_sd
    cells = _place_units(config, rng)
    W = build_weights(config.weight_spec, cells)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IsolatedUnitsWarning)
        Wstd = row_standardize(W)
    t = np.linspace(0.0, 1.0, config.n_timepoints)
    n = config.n_units
    Xs = []
    for _ in range(config.d_vars):
        alpha = rng.uniform(-3.0, 3.0, size=n)
        X = alpha[:, None] * t[None, :]
        if config.gp_variance > 0:
            X = X + gp_sample(t, config.gp_lengthscale, config.gp_variance, rng, size=n)
        Xs.append(X)
    Y = sar_solve(Wstd, np.hstack(Xs), config.rho).reshape(n, config.d_vars, -1).transpose(1, 0, 2)
    if noise_sd > 0:
        Y = Y + rng.normal(0.0, noise_sd, size=Y.shape)
    return Y, t, cells, W


def _to_panel(Y: np.ndarray, t: np.ndarray, cells: np.ndarray) -> ObservationPanel:
    d, n, T = Y.shape
    frame = pd.DataFrame(
        {
            "unit": np.tile(np.repeat(np.arange(n), T), d),
            "variable": np.repeat([f"v{j + 1}" for j in range(d)], n * T),
            "x": np.tile(t, d * n),
            "value": Y.ravel(),
        }
    )
    coords = pd.DataFrame({"s1": cells[:, 0].astype(float), "s2": cells[:, 1].astype(float)})
    return ObservationPanel(frame, coords)


def model1(config: SimConfig, rng):
    """Univariate Model 1 (GP curves, SAR dependence, no extra noise).

    Returns ``(panel, coords, W)``.
    """
    if config.d_vars != 1:
        raise ValueError("model1 needs d_vars = 1")
    Y, t, cells, W = simulate(config, rng, noise_sd=0.0)
    return _to_panel(Y, t, cells), cells.astype(float), W


def multivariate_sar(config: SimConfig, rng):
    """Multivariate SAR model with additive white noise of sd ``noise_sd``.

    Returns ``(panel, coords, W)``.
    """
    Y, t, cells, W = simulate(config, rng)
    return _to_panel(Y, t, cells), cells.astype(float), W


def _replicate(config: SimConfig, r: int, seed_seq) -> list[dict]:
    rng = np.random.default_rng(seed_seq)
    generate = model1 if config.model == "model1" else multivariate_sar
    panel, _, W = generate(config, rng)
    bases = [make_basis(0.0, 1.0, config.n_basis, config.order) for _ in range(config.d_vars)]
    sample, _ = center(smooth(panel, bases))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IsolatedUnitsWarning)
        Wstd = row_standardize(W)
    perm_seeds = iter(seed_seq.spawn(64))

    def pvalue(x):
        return moran_test(x, Wstd, config.n_permutations, seed=next(perm_seeds)).p_value

    rows = []
    tr = trace_moran(sample, Wstd, n_permutations=config.n_permutations, seed=next(perm_seeds))
    rows.append(dict(replicate=r, method="trace_moran", component=0, sign="",
                     var_explained=np.nan, score_moran=tr.normalized, p_value=tr.p_value))

    p = sample.n_coef
    fp = mfpca(sample, min(max(config.n_pos, 1), p))
    for k in range(fp.n_components):
        rows.append(dict(replicate=r, method="mfpca", component=k + 1, sign="positive",
                         var_explained=fp.var_explained[k],
                         score_moran=_score_moran(fp.scores[:, k], Wstd),
                         p_value=pvalue(fp.scores[:, k])))

    sp_res = mfaspca(sample, Wstd, n_pos=min(config.n_pos, p), n_neg=min(config.n_neg, p - min(config.n_pos, p)))
    for k, (sign, rank) in enumerate(sp_res.sign_rank()):
        rows.append(dict(replicate=r, method="mfaspca", component=rank,
                         sign="positive" if sign > 0 else "negative",
                         var_explained=sp_res.var_explained[k],
                         score_moran=sp_res.score_moran[k],
                         p_value=pvalue(sp_res.scores[:, k])))
    return rows


def _score_moran(chi, Wstd) -> float:
    ss = chi @ chi
    return float(chi @ (Wstd.matrix @ chi) / ss) if ss > 0 else float("nan")


def run_experiment(config: SimConfig) -> pd.DataFrame:
    """Simulate, smooth, center and analyse ``n_replicates`` data sets.

    Each replicate gets its own RNG stream spawned from ``config.seed``, so
    rows depend only on the replicate index. One row per (replicate, method,
    component); method ``trace_moran`` carries the trace statistic (curve
    average) and its permutation p-value.
    """
    streams = np.random.SeedSequence(config.seed).spawn(config.n_replicates)
    rows = []
    for r, ss in enumerate(streams):
        rows.extend(_replicate(config, r, ss))
    return pd.DataFrame(rows, columns=EXPERIMENT_COLUMNS)


def summarize_experiment(table: pd.DataFrame) -> pd.DataFrame:
    """Median and interquartile range of variance explained per method/sign/component."""
    cols = ["method", "sign", "component", "n", "median_var_explained", "iqr_var_explained",
            "median_score_moran", "rejection_rate_05"]
    data = table[table["method"] != "trace_moran"]
    trace = table[table["method"] == "trace_moran"]
    out = []
    for (method, sign, comp), g in data.groupby(["method", "sign", "component"], sort=True):
        v = g["var_explained"].to_numpy(float)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        out.append([method, sign, comp, len(g), med, q3 - q1,
                    float(np.median(g["score_moran"])), float(np.mean(g["p_value"] < 0.05))])
    if len(trace):
        out.append(["trace_moran", "", 0, len(trace), np.nan, np.nan,
                    float(np.median(trace["score_moran"])), float(np.mean(trace["p_value"] < 0.05))])
    return pd.DataFrame(out, columns=cols)
