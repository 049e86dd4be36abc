"""CSV readers and writers for panels, samples and analysis outputs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from mfaspca.basis import FunctionalSample, ObservationPanel, make_basis
from mfaspca.moran import MoranCurve, MoranResult

FLOAT_FORMAT = "%.17g"


def _read(path, **kwargs) -> pd.DataFrame:
    # round_trip parsing keeps "%.17g" floats bit-exact
    return pd.read_csv(path, float_precision="round_trip", **kwargs)


def _require(df: pd.DataFrame, cols, path) -> None:
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")


def read_panel_csv(path, coords_path=None) -> ObservationPanel:
    """Read ``unit,variable,x,value`` (and optionally ``unit,s1,s2``)."""
    df = _read(path, dtype={"unit": str, "variable": str}, encoding="utf-8")
    _require(df, ["unit", "variable", "x", "value"], path)
    df = df[["unit", "variable", "x", "value"]]
    if df[["x", "value"]].isna().any().any():
        raise ValueError(f"{path}: missing x or value entries")
    coords = read_coords_csv(coords_path) if coords_path else None
    return ObservationPanel(df, coords)


def read_coords_csv(path) -> pd.DataFrame:
    df = _read(path, dtype={"unit": str}, encoding="utf-8")
    _require(df, ["unit", "s1", "s2"], path)
    if df["unit"].duplicated().any():
        raise ValueError(f"{path}: duplicate unit ids")
    return df.set_index("unit")[["s1", "s2"]].astype(float)


def write_panel_csv(frame: pd.DataFrame, path) -> None:
    frame[["unit", "variable", "x", "value"]].to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_sample(sample: FunctionalSample, out_dir) -> None:
    """Write ``basis.csv`` and ``coefficients.csv`` describing a smoothed sample."""
    out = Path(out_dir)
    pd.DataFrame(
        {
            "variable": list(sample.variable_ids),
            "domain_lo": [b.domain_lo for b in sample.bases],
            "domain_hi": [b.domain_hi for b in sample.bases],
            "n_basis": [b.n_basis for b in sample.bases],
            "order": [b.order for b in sample.bases],
        }
    ).to_csv(out / "basis.csv", index=False, float_format=FLOAT_FORMAT)
    pieces = []
    for var, C in zip(sample.variable_ids, sample.coefs):
        n, nb = C.shape
        pieces.append(
            pd.DataFrame(
                {
                    "unit": np.repeat(np.asarray(sample.unit_ids, dtype=object), nb),
                    "variable": var,
                    "m": np.tile(np.arange(nb), n),
                    "coef": C.ravel(),
                }
            )
        )
    pd.concat(pieces).to_csv(out / "coefficients.csv", index=False, float_format=FLOAT_FORMAT)
    grid = pd.concat(
        pd.DataFrame({"variable": var, "x": g}) for var, g in zip(sample.variable_ids, sample.grid)
    )
    grid.to_csv(out / "grid.csv", index=False, float_format=FLOAT_FORMAT)


def read_sample(in_dir) -> FunctionalSample:
    """Inverse of :func:`write_sample`; the result is not centered."""
    src = Path(in_dir)
    basis_df = _read(src / "basis.csv", dtype={"variable": str})
    coef_df = _read(src / "coefficients.csv", dtype={"unit": str, "variable": str})
    _require(basis_df, ["variable", "domain_lo", "domain_hi", "n_basis", "order"], src / "basis.csv")
    _require(coef_df, ["unit", "variable", "m", "coef"], src / "coefficients.csv")
    grid_path = src / "grid.csv"
    grid_df = _read(grid_path, dtype={"variable": str}) if grid_path.exists() else None
    units = list(pd.unique(coef_df["unit"]))
    pos = {u: i for i, u in enumerate(units)}
    bases, coefs, grids = [], [], []
    for row in basis_df.itertuples(index=False):
        b = make_basis(row.domain_lo, row.domain_hi, int(row.n_basis), int(row.order))
        sub = coef_df[coef_df["variable"] == row.variable]
        C = np.full((len(units), b.n_basis), np.nan)
        C[sub["unit"].map(pos).to_numpy(), sub["m"].to_numpy(int)] = sub["coef"].to_numpy(float)
        if np.isnan(C).any():
            raise ValueError(f"incomplete coefficients for variable {row.variable!r}")
        bases.append(b)
        coefs.append(C)
        if grid_df is not None:
            grids.append(grid_df.loc[grid_df["variable"] == row.variable, "x"].to_numpy(float))
        else:
            grids.append(np.linspace(b.domain_lo, b.domain_hi, 101))
    return FunctionalSample(
        tuple(bases), tuple(coefs), tuple(grids), centered=False,
        unit_ids=tuple(units), variable_ids=tuple(basis_df["variable"]),
    )


def curves_frame(sample_ids, variable_ids, grids, values) -> pd.DataFrame:
    """Long ``unit,variable,x,value`` frame from per-variable ``(n, G_j)`` arrays."""
    pieces = []
    for var, g, V in zip(variable_ids, grids, values):
        n, G = V.shape
        pieces.append(
            pd.DataFrame(
                {
                    "unit": np.repeat(np.asarray(sample_ids, dtype=object), G),
                    "variable": var,
                    "x": np.tile(g, n),
                    "value": V.ravel(),
                }
            )
        )
    return pd.concat(pieces, ignore_index=True)


def write_curve(curve: MoranCurve, path) -> None:
    pd.DataFrame({"x": curve.x, "moran": curve.values}).to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )


def read_curve(path) -> pd.DataFrame:
    df = _read(path)
    _require(df, ["x", "moran"], path)
    return df


TEST_COLUMNS = ["statistic", "p_value", "perm_mean", "perm_sd", "n_permutations", "seed"]


def write_test(result: MoranResult, path, seed=None) -> None:
    """One-row test table; trailing columns add the domain measure and curve average."""
    row = {
        "statistic": result.statistic,
        "p_value": result.p_value,
        "perm_mean": result.perm_mean,
        "perm_sd": result.perm_sd,
        "n_permutations": result.n_permutations,
        "seed": seed if seed is not None else result.seed,
        "domain_measure": result.domain_measure if result.domain_measure is not None else 1.0,
        "average": result.normalized,
        "significance": result.stars,
    }
    pd.DataFrame([row]).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_test(path) -> dict:
    df = _read(path, dtype={"significance": str})
    _require(df, TEST_COLUMNS, path)
    return df.iloc[0].to_dict()
