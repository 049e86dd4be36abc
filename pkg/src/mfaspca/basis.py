"""B-spline bases, smoothing of discrete observations, and coefficient spaces.

Curves are stored as raw B-spline coefficients. Every matrix statistic in the
package works on *orthonormal* coordinates instead: with ``gram = L.T @ L``
(``L`` upper triangular) the row ``L @ c`` has the property that ordinary dot
products equal the L2 inner products of the underlying curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "BasisSystem",
    "FunctionalSample",
    "ObservationPanel",
    "make_basis",
    "smooth",
    "center",
    "orthonormal_scores",
    "evaluate",
]

# tolerance used when checking abscissae against a domain
_DOMAIN_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class BasisSystem:
    """Univariate B-spline basis on ``[domain_lo, domain_hi]``.

    Attributes
    ----------
    domain_lo, domain_hi : float
        Endpoints of the domain.
    order : int
        Spline order (degree + 1).
    interior_knots : ndarray
        Sorted knots strictly inside the domain.
    gram : ndarray, shape (n_basis, n_basis)
        Inner products of the basis functions.
    orth_factor : ndarray, shape (n_basis, n_basis)
        Upper-triangular ``L`` with ``gram = L.T @ L``.
    penalty : ndarray, shape (n_basis, n_basis)
        Inner products of second derivatives (roughness penalty).
    """

    domain_lo: float
    domain_hi: float
    order: int
    interior_knots: np.ndarray
    gram: np.ndarray
    orth_factor: np.ndarray
    penalty: np.ndarray
    _spline: BSpline = field(repr=False)

    @property
    def n_basis(self) -> int:
        return self.order + len(self.interior_knots)

    @property
    def knots(self) -> np.ndarray:
        k = self.order
        return np.concatenate(
            [np.full(k, self.domain_lo), self.interior_knots, np.full(k, self.domain_hi)]
        )

    @property
    def measure(self) -> float:
        return self.domain_hi - self.domain_lo

    def design(self, x, deriv: int = 0) -> np.ndarray:
        """Evaluate all basis functions (or a derivative) at ``x``.

        Returns an array of shape ``(len(x), n_basis)``. Raises
        ``ValueError`` if any abscissa lies outside the domain.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        tol = _DOMAIN_EPS * max(1.0, abs(self.domain_lo), abs(self.domain_hi))
        if np.any(~np.isfinite(x)) or np.any(x < self.domain_lo - tol) or np.any(
            x > self.domain_hi + tol
        ):
            raise ValueError(
                f"abscissae outside the basis domain [{self.domain_lo}, {self.domain_hi}]"
            )
        x = np.clip(x, self.domain_lo, self.domain_hi)
        spl = self._spline if deriv == 0 else self._spline.derivative(deriv)
        return spl(x)

    def orthonormal_design(self, x) -> np.ndarray:
        """Values of the orthonormalized basis ``L^{-T} B(x)``, shape ``(len(x), n_basis)``."""
        from scipy.linalg import solve_triangular

        B = self.design(x)
        # rows are B(x)^T; want (L^{-T} B(x))^T = B(x)^T L^{-1}
        return solve_triangular(self.orth_factor, B.T, trans="T", lower=False).T


def _gauss_legendre_nodes(breaks: np.ndarray, n_points: int):
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    a, b = breaks[:-1, None], breaks[1:, None]
    half = (b - a) / 2.0
    x = (a + b) / 2.0 + half * nodes[None, :]
    w = half * weights[None, :]
    return x.ravel(), w.ravel()


def make_basis(domain_lo: float, domain_hi: float, n_basis: int = 10, order: int = 4) -> BasisSystem:
    """Construct a B-spline basis with equally spaced interior knots.

    The Gram and roughness matrices are integrated with composite
    Gauss-Legendre quadrature on each knot span, which is exact for the
    piecewise polynomial integrands.
    """
    if not (np.isfinite(domain_lo) and np.isfinite(domain_hi)):
        raise ValueError("domain endpoints must be finite")
    if not domain_lo < domain_hi:
        raise ValueError("domain_lo must be smaller than domain_hi")
    if int(order) != order or order < 2:
        raise ValueError("order must be an integer >= 2")
    if int(n_basis) != n_basis or n_basis < order:
        raise ValueError(f"n_basis ({n_basis}) must be an integer >= order ({order})")
    order, n_basis = int(order), int(n_basis)

    n_interior = n_basis - order
    breaks = np.linspace(domain_lo, domain_hi, n_interior + 2)
    interior = breaks[1:-1].copy()
    t = np.concatenate([np.full(order, float(domain_lo)), interior, np.full(order, float(domain_hi))])
    spline = BSpline(t, np.eye(n_basis), order - 1, extrapolate=False)

    # products of degree-(order-1) pieces have degree 2*order-2
    xq, wq = _gauss_legendre_nodes(breaks, max(5, order))
    B = spline(xq)
    gram = (B * wq[:, None]).T @ B
    gram = (gram + gram.T) / 2.0
    if order > 2:
        D2 = spline.derivative(2)(xq)
        penalty = (D2 * wq[:, None]).T @ D2
        penalty = (penalty + penalty.T) / 2.0
    else:
        penalty = np.zeros((n_basis, n_basis))

    # numpy returns lower C with gram = C C^T; the upper factor is C^T
    orth = np.linalg.cholesky(gram).T
    return BasisSystem(
        domain_lo=float(domain_lo),
        domain_hi=float(domain_hi),
        order=order,
        interior_knots=interior,
        gram=gram,
        orth_factor=orth,
        penalty=penalty,
        _spline=spline,
    )


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """``n_units`` spatial units times ``d_vars`` curves in B-spline coordinates."""

    bases: tuple
    coefs: tuple
    grid: tuple
    centered: bool = False
    unit_ids: tuple | None = None
    variable_ids: tuple | None = None

    def __post_init__(self):
        if len(self.bases) != len(self.coefs) or len(self.bases) != len(self.grid):
            raise ValueError("bases, coefs and grid need one entry per variable")
        if not self.coefs:
            raise ValueError("a sample needs at least one variable")
        n = None
        for b, c in zip(self.bases, self.coefs):
            c = np.asarray(c)
            if c.ndim != 2 or c.shape[1] != b.n_basis:
                raise ValueError("coefficient matrix must be n_units x n_basis")
            if n is None:
                n = c.shape[0]
            elif c.shape[0] != n:
                raise ValueError("every coefficient matrix needs n_units rows")
        if self.unit_ids is None:
            object.__setattr__(self, "unit_ids", tuple(range(n)))
        if self.variable_ids is None:
            object.__setattr__(self, "variable_ids", tuple(range(len(self.bases))))

    @classmethod
    def from_coefs(cls, bases, coefs, grid=None, **kwargs) -> "FunctionalSample":
        bases = tuple(bases)
        coefs = tuple(np.array(c, dtype=float, ndmin=2) for c in coefs)
        if grid is None:
            grid = tuple(np.linspace(b.domain_lo, b.domain_hi, 101) for b in bases)
        return cls(bases, coefs, tuple(np.asarray(g, dtype=float) for g in grid), **kwargs)

    @property
    def n_units(self) -> int:
        return self.coefs[0].shape[0]

    @property
    def d_vars(self) -> int:
        return len(self.bases)

    @property
    def n_coef(self) -> int:
        return sum(b.n_basis for b in self.bases)

    def raw_coefs(self) -> np.ndarray:
        """Raw coefficients of all variables concatenated column-wise."""
        return np.hstack(self.coefs)

    def with_coefs(self, coefs, centered: bool | None = None) -> "FunctionalSample":
        return replace(
            self,
            coefs=tuple(np.asarray(c, dtype=float) for c in coefs),
            centered=self.centered if centered is None else centered,
        )


@dataclass(frozen=True)
class ObservationPanel:
    """Long-format observations with columns ``unit, variable, x, value``.

    Units and variables keep the order of their first appearance. ``coords``
    is an optional frame indexed by unit with columns ``s1, s2``.
    """

    frame: pd.DataFrame
    coords: pd.DataFrame | None = None

    def __post_init__(self):
        missing = {"unit", "variable", "x", "value"} - set(self.frame.columns)
        if missing:
            raise ValueError(f"panel is missing columns: {sorted(missing)}")

    @classmethod
    def from_records(cls, records, coords=None) -> "ObservationPanel":
        frame = pd.DataFrame.from_records(list(records), columns=["unit", "variable", "x", "value"])
        return cls(frame, coords)

    @property
    def units(self) -> list:
        return list(pd.unique(self.frame["unit"]))

    @property
    def variables(self) -> list:
        return list(pd.unique(self.frame["variable"]))

    def domain(self, variable) -> tuple[float, float]:
        x = self.frame.loc[self.frame["variable"] == variable, "x"].to_numpy(dtype=float)
        return float(x.min()), float(x.max())

    def coordinates(self) -> np.ndarray:
        """Coordinates aligned with ``units``, shape ``(n_units, 2)``."""
        if self.coords is None:
            raise ValueError("panel has no coordinates")
        try:
            return self.coords.loc[self.units, ["s1", "s2"]].to_numpy(dtype=float)
        except KeyError as exc:
            raise ValueError(f"coordinates missing for units: {exc}") from None


def smooth(
    panel: ObservationPanel,
    bases: Sequence[BasisSystem],
    roughness_penalty: float = 0.0,
) -> FunctionalSample:
    """Penalized least-squares fit of every (unit, variable) curve.

    Minimizes ``sum (y - B c)^2 + roughness_penalty * c' R c`` where ``R``
    integrates squared second derivatives. Units sharing the same abscissae
    reuse one factorization.
    """
    if roughness_penalty < 0:
        raise ValueError("roughness_penalty must be nonnegative")
    variables = panel.variables
    units = panel.units
    if len(bases) != len(variables):
        raise ValueError(f"need one basis per variable ({len(variables)}), got {len(bases)}")
    unit_pos = {u: i for i, u in enumerate(units)}
    frame = panel.frame

    coefs, grids = [], []
    for var, basis in zip(variables, bases):
        sub = frame[frame["variable"] == var]
        C = np.full((len(units), basis.n_basis), np.nan)
        cache: dict[bytes, tuple] = {}
        for unit, g in sub.groupby("unit", sort=False):
            x = g["x"].to_numpy(dtype=float)
            y = g["value"].to_numpy(dtype=float)
            order = np.argsort(x, kind="stable")
            x, y = x[order], y[order]
            key = x.tobytes()
            if key not in cache:
                cache[key] = _smoother(basis, x, roughness_penalty, unit, var)
            B, factor = cache[key]
            C[unit_pos[unit]] = cho_solve(factor, B.T @ y)
        missing = [u for u in units if np.isnan(C[unit_pos[u], 0])]
        if missing:
            raise ValueError(f"variable {var!r} has no observations for units {missing}")
        coefs.append(C)
        grids.append(np.unique(sub["x"].to_numpy(dtype=float)))
    return FunctionalSample(
        tuple(bases), tuple(coefs), tuple(grids), centered=False,
        unit_ids=tuple(units), variable_ids=tuple(variables),
    )


def _smoother(basis: BasisSystem, x, penalty, unit, var):
    n_distinct = len(np.unique(x))
    if penalty == 0 and n_distinct < basis.n_basis:
        raise ValueError(
            f"rank-deficient design for unit {unit!r}, variable {var!r}: "
            f"{n_distinct} distinct abscissae < n_basis {basis.n_basis}"
        )
    B = basis.design(x)
    A = B.T @ B + penalty * basis.penalty
    try:
        factor = cho_factor(A)
    except np.linalg.LinAlgError:
        raise ValueError(f"rank-deficient design for unit {unit!r}, variable {var!r}") from None
    d = np.diag(factor[0])
    if d.min() <= 1e-7 * d.max():
        raise ValueError(f"rank-deficient design for unit {unit!r}, variable {var!r}")
    return B, factor


def center(sample: FunctionalSample) -> tuple[FunctionalSample, list[np.ndarray]]:
    """Subtract the empirical mean curve; returns the centered sample and mean coefficients."""
    means = [c.mean(axis=0) for c in sample.coefs]
    centered = [c - m for c, m in zip(sample.coefs, means)]
    return sample.with_coefs(centered, centered=True), means


def orthonormal_scores(sample: FunctionalSample) -> np.ndarray:
    """The ``n_units x p`` score matrix in orthonormal coordinates.

    Row ``i`` dotted with row ``k`` equals the inner product of curves
    ``i`` and ``k`` summed over variables.
    """
    if not sample.centered:
        raise ValueError("orthonormal_scores needs a centered sample; call center() first")
    return _orthonormal(sample)


def _orthonormal(sample: FunctionalSample) -> np.ndarray:
    return np.hstack([c @ b.orth_factor.T for b, c in zip(sample.bases, sample.coefs)])


def evaluate(sample: FunctionalSample, variable: int, abscissae) -> np.ndarray:
    """Curve values of one variable, shape ``(n_units, len(abscissae))``."""
    basis = sample.bases[variable]
    return sample.coefs[variable] @ basis.design(abscissae).T
