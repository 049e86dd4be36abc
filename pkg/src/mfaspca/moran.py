"""Classical, functional, bivariate and multivariate Moran's I with permutation inference.

All statistics use the row-standardized weights unless ``standardize=False``
and work on centered data (samples are centered internally when needed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from mfaspca import _backend
from mfaspca.basis import FunctionalSample, center
from mfaspca.weights import SpatialWeights, row_standardize

__all__ = [
    "MoranResult",
    "MoranCurve",
    "classical_moran",
    "moran_test",
    "panel_moran",
    "panel_moran_test",
    "functional_moran_curve",
    "trace_moran",
    "bivariate_functional_moran",
    "bivariate_trace_moran",
    "permutation_test",
    "draw_permutations",
    "significance_stars",
    "common_grid_values",
]

# relative threshold below which the pointwise variance is treated as zero
MASK_EPS = 1e-10
# relative slack when counting permuted statistics at least as extreme
_TIE_EPS = 1e-12
ALTERNATIVES = ("greater", "less", "two-sided")


@dataclass
class MoranResult:
    """Observed statistic with a summary of its permutation distribution."""

    statistic: float
    n_permutations: int
    perm_mean: float
    perm_sd: float
    p_value: float
    alternative: str = "greater"
    seed: int | None = None
    draws: np.ndarray = field(default=None, repr=False)
    domain_measure: float | None = None
    curve: "MoranCurve | None" = field(default=None, repr=False)

    @property
    def normalized(self) -> float:
        """Trace statistic divided by the domain measure (the curve's average)."""
        if self.domain_measure is None:
            return self.statistic
        return self.statistic / self.domain_measure

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


@dataclass
class MoranCurve:
    """Pointwise Moran's I; ``values`` is NaN where ``valid`` is False."""

    x: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    numerator: np.ndarray = field(repr=False)
    denominator: np.ndarray = field(repr=False)


def significance_stars(p: float) -> str:
    """``***`` p<0.001, ``**`` p<0.01, ``*`` p<0.05, ``†`` p<0.1."""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "†"
    return ""


def _weights_csr(W, standardize: bool) -> sp.csr_matrix:
    if isinstance(W, SpatialWeights):
        return (row_standardize(W) if standardize else W).matrix
    m = sp.csr_matrix(W, dtype=float)
    if standardize:
        sums = np.asarray(m.sum(axis=1)).ravel()
        scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
        m = sp.csr_matrix(sp.diags(scale) @ m)
    m.sort_indices()
    return m


# --- permutation machinery -------------------------------------------------

def draw_permutations(n_units: int, n_permutations: int, seed=None) -> np.ndarray:
    """``(n_permutations, n_units)`` array of uniform random relabellings.

    All permutations are drawn up front from one generator, so the outcome
    depends only on ``seed`` and not on how the work is scheduled later.
    """
    if n_permutations < 0:
        raise ValueError("n_permutations must be nonnegative")
    rng = np.random.default_rng(seed)
    base = np.tile(np.arange(n_units, dtype=np.int64), (n_permutations, 1))
    return rng.permuted(base, axis=1)


def _summarize(observed: float, draws: np.ndarray, alternative: str, seed) -> MoranResult:
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    draws = np.asarray(draws, dtype=float)
    n = len(draws)
    slack = _TIE_EPS * max(1.0, abs(observed))
    if n == 0:
        return MoranResult(float(observed), 0, np.nan, np.nan, 1.0, alternative, seed, draws)
    if alternative == "greater":
        extreme = np.count_nonzero(draws >= observed - slack)
    elif alternative == "less":
        extreme = np.count_nonzero(draws <= observed + slack)
    else:
        mid = draws.mean()
        extreme = np.count_nonzero(np.abs(draws - mid) >= abs(observed - mid) - slack)
    return MoranResult(
        statistic=float(observed),
        n_permutations=n,
        perm_mean=float(draws.mean()),
        perm_sd=float(draws.std(ddof=1)) if n > 1 else 0.0,
        p_value=(1.0 + extreme) / (1.0 + n),
        alternative=alternative,
        seed=seed,
        draws=draws,
    )


def permutation_test(
    statistic: Callable[[np.ndarray], float],
    n_units: int,
    n_permutations: int = 999,
    seed=None,
    alternative: str = "greater",
) -> MoranResult:
    """Generic permutation test.

    ``statistic(perm)`` must return the statistic computed after relabelling
    unit ``perm[i]`` as ``i``; the observed value is ``statistic(arange(n))``.
    """
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    observed = statistic(np.arange(n_units))
    perms = draw_permutations(n_units, n_permutations, seed)
    draws = np.array([statistic(p) for p in perms])
    return _summarize(observed, draws, alternative, seed)


# --- classical -------------------------------------------------------------

def _centered_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    z = x - x.mean()
    if not np.any(np.abs(z) > 1e-14 * max(1.0, np.abs(x).max())):
        raise ValueError("Moran's I is undefined for a constant vector")
    return z


def classical_moran(x, W, standardize: bool = True) -> float:
    """``z' W z / z' z`` for the centered vector ``z``."""
    z = _centered_vector(x)
    m = _weights_csr(W, standardize)
    if m.shape[0] != z.size:
        raise ValueError(f"W has {m.shape[0]} units, x has {z.size}")
    return float(z @ (m @ z) / (z @ z))


def moran_test(
    x, W, n_permutations: int = 999, seed=None, alternative: str = "greater",
    standardize: bool = True,
) -> MoranResult:
    """Classical Moran's I with a permutation p-value."""
    z = _centered_vector(x)
    m = _weights_csr(W, standardize)
    den = z @ z
    observed = float(z @ (m @ z) / den)
    perms = draw_permutations(z.size, n_permutations, seed)
    draws = _backend.moran_numerators(z, m, perms) / den
    return _summarize(observed, draws, alternative, seed)


def panel_moran(values, W, standardize: bool = True) -> float:
    """Classical Moran's I of an ``n x G`` panel: ``tr(Y'WY) / tr(Y'Y)`` with centered columns."""
    Y = np.asarray(values, dtype=float)
    Y = Y - Y.mean(axis=0)
    m = _weights_csr(W, standardize)
    den = np.sum(Y * Y)
    if den == 0:
        raise ValueError("panel has zero variance")
    return float(np.sum(Y * (m @ Y)) / den)


def panel_moran_test(
    values, W, n_permutations: int = 999, seed=None, alternative: str = "greater",
    standardize: bool = True,
) -> MoranResult:
    Y = np.asarray(values, dtype=float)
    Y = Y - Y.mean(axis=0)
    m = _weights_csr(W, standardize)
    den = np.sum(Y * Y)
    if den == 0:
        raise ValueError("panel has zero variance")
    observed = float(np.sum(Y * (m @ Y)) / den)
    perms = draw_permutations(Y.shape[0], n_permutations, seed)
    A = Y[None]
    draws = _backend.cross_numerators(A, A, m, perms).sum(axis=1) / den
    return _summarize(observed, draws, alternative, seed)


# --- functional ------------------------------------------------------------

def _ensure_centered(sample: FunctionalSample) -> FunctionalSample:
    return sample if sample.centered else center(sample)[0]


def _reference_grid(sample: FunctionalSample, abscissae) -> np.ndarray:
    b0 = sample.bases[0]
    if abscissae is None:
        return np.linspace(b0.domain_lo, b0.domain_hi, 101)
    return np.asarray(abscissae, dtype=float)


def _mapped(sample: FunctionalSample, j: int, x: np.ndarray) -> np.ndarray:
    """Map abscissae on variable 0's domain affinely onto variable ``j``'s domain."""
    b0, bj = sample.bases[0], sample.bases[j]
    if j == 0 or (bj.domain_lo == b0.domain_lo and bj.domain_hi == b0.domain_hi):
        return x
    u = (x - b0.domain_lo) / b0.measure
    return bj.domain_lo + u * bj.measure


def common_grid_values(sample: FunctionalSample, abscissae=None, variables=None) -> np.ndarray:
    """Curve values on the common grid, shape ``(d, n, G)``."""
    x = _reference_grid(sample, abscissae)
    variables = range(sample.d_vars) if variables is None else variables
    return np.stack(
        [sample.coefs[j] @ sample.bases[j].design(_mapped(sample, j, x)).T for j in variables]
    )


def _mask(den: np.ndarray) -> np.ndarray:
    top = den.max() if den.size else 0.0
    if not top > 0:
        raise ValueError("all curves are zero; Moran's I is undefined")
    return den >= MASK_EPS * top


def _curve(x, num, den, valid) -> MoranCurve:
    values = np.full_like(den, np.nan)
    values[valid] = num[valid] / den[valid]
    return MoranCurve(x, values, valid, num, den)


def functional_moran_curve(
    sample: FunctionalSample, W, abscissae=None, standardize: bool = True
) -> MoranCurve:
    """Pointwise (multivariate) functional Moran's I.

    Numerator and denominator are evaluated from the coefficient cross
    products ``C' W C`` and ``C' C`` of each variable, which avoids the
    double sum over units at every abscissa.
    """
    sample = _ensure_centered(sample)
    m = _weights_csr(W, standardize)
    x = _reference_grid(sample, abscissae)
    n = sample.n_units
    num = np.zeros(x.size)
    den = np.zeros(x.size)
    for j, (basis, C) in enumerate(zip(sample.bases, sample.coefs)):
        B = basis.design(_mapped(sample, j, x))
        cross = C.T @ (m @ C)
        gram = C.T @ C
        num += np.einsum("gm,mk,gk->g", B, cross, B) / n
        den += np.einsum("gm,mk,gk->g", B, gram, B) / n
    return _curve(x, num, den, _mask(den))


def _masked_trapezoid(x, y, valid):
    """Trapezoid integral over segments with both ends valid; returns (integral, length)."""
    seg = valid[:-1] & valid[1:]
    dx = np.diff(x)[seg]
    if y.ndim == 1:
        y = y[None]
    ys = np.where(valid, y, 0.0)
    mids = 0.5 * (ys[:, :-1] + ys[:, 1:])[:, seg]
    return mids @ dx, dx.sum()


def _trace_from_numerators(x, nums, den, valid):
    integral, measure = _masked_trapezoid(x, nums / np.where(valid, den, 1.0), valid)
    if measure <= 0:
        raise ValueError("Moran curve is masked on the whole domain")
    return integral / measure * (x[-1] - x[0])


def _trace_test(x, A, B, den, m, n_permutations, seed, alternative, curve):
    valid = curve.valid
    n = A.shape[1]
    observed = float(_trace_from_numerators(x, curve.numerator * n, den, valid)[0])
    perms = draw_permutations(n, n_permutations, seed)
    if n_permutations:
        draws = _trace_from_numerators(x, _backend.cross_numerators(A, B, m, perms), den, valid)
    else:
        draws = np.empty(0)
    res = _summarize(observed, draws, alternative, seed)
    res.domain_measure = float(x[-1] - x[0])
    res.curve = curve
    return res


def trace_moran(
    sample: FunctionalSample,
    W,
    abscissae=None,
    n_permutations: int = 999,
    seed=None,
    alternative: str = "greater",
    standardize: bool = True,
) -> MoranResult:
    """Integrated functional Moran's I with a unit-label permutation test.

    The statistic integrates the pointwise curve with the trapezoid rule over
    the unmasked part of the grid and rescales to the full domain length, so
    a constant curve ``c`` gives ``c * |domain|``. ``result.normalized`` is the
    average value of the curve.
    """
    sample = _ensure_centered(sample)
    m = _weights_csr(W, standardize)
    x = _reference_grid(sample, abscissae)
    curve = functional_moran_curve(sample, m, x, standardize=False)
    V = common_grid_values(sample, x)
    den = np.einsum("kig,kig->g", V, V)
    return _trace_test(x, V, V, den, m, n_permutations, seed, alternative, curve)


def _bivariate_parts(sample, k, l, m, x):
    sample = _ensure_centered(sample)
    for v in (k, l):
        if not 0 <= v < sample.d_vars:
            raise ValueError(f"variable index {v} out of range")
    V = common_grid_values(sample, x, variables=[k, l])
    a, b = V[0], V[1]
    norm_a = np.einsum("ig,ig->g", a, a)
    norm_b = np.einsum("ig,ig->g", b, b)
    valid = _mask(norm_a) & _mask(norm_b)
    den = np.sqrt(norm_a * norm_b)
    num = np.einsum("ig,ig->g", a, m @ b)
    n = sample.n_units
    return a, b, _curve(x, num / n, den / n, valid)


def bivariate_functional_moran(
    sample: FunctionalSample, k: int, l: int, W, abscissae=None, standardize: bool = True
) -> MoranCurve:
    """Pointwise cross-variable Moran's I between variables ``k`` and ``l``."""
    m = _weights_csr(W, standardize)
    x = _reference_grid(sample, abscissae)
    return _bivariate_parts(sample, k, l, m, x)[2]


def bivariate_trace_moran(
    sample: FunctionalSample, k: int, l: int, W, abscissae=None,
    n_permutations: int = 999, seed=None, alternative: str = "greater",
    standardize: bool = True,
) -> MoranResult:
    """Integrated bivariate Moran's I; units keep both variables when permuted."""
    m = _weights_csr(W, standardize)
    x = _reference_grid(sample, abscissae)
    a, b, curve = _bivariate_parts(sample, k, l, m, x)
    den = curve.denominator * sample.n_units
    return _trace_test(x, a[None], b[None], den, m, n_permutations, seed, alternative, curve)
