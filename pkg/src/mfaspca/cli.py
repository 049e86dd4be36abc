"""Batch command line: ``smooth``, ``moran``, ``spca``, ``reconstruct``, ``simulate``.

Options can come from ``--config`` (flat ``key = value`` lines using the long
option names without dashes, e.g. ``nperm = 999``); explicit flags win.
Failures exit nonzero after printing one JSON line ``{"error": CODE, ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from mfaspca import io
from mfaspca.basis import ObservationPanel, center, evaluate, make_basis, smooth
from mfaspca.moran import (
    bivariate_functional_moran,
    bivariate_trace_moran,
    common_grid_values,
    moran_test,
    panel_moran_test,
    significance_stars,
    trace_moran,
)
from mfaspca.sim import SimConfig, run_experiment, summarize_experiment
from mfaspca.spca import mfaspca, mfpca, reconstruct, score_table
from mfaspca.weights import (
    IsolatedUnitsWarning,
    SpatialWeights,
    contiguity_weights,
    knn_weights,
    read_edge_list,
    read_weights_csv,
    row_standardize,
)


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# --- input handling ----------------------------------------------------------

def log_transform(frame: pd.DataFrame) -> pd.DataFrame:
    """``log(value + c)`` with ``c`` the smallest strictly positive value in the panel."""
    values = frame["value"].to_numpy(float)
    positive = values[values > 0]
    if positive.size == 0:
        raise CliError("E_NONPOSITIVE", "log transform needs at least one positive value")
    shifted = values + positive.min()
    if np.any(shifted <= 0):
        raise CliError("E_NONPOSITIVE", "values remain nonpositive after adding the constant")
    out = frame.copy()
    out["value"] = np.log(shifted)
    return out


def _load_panel(args) -> ObservationPanel:
    if not args.panel:
        raise CliError("E_MISSING_INPUT", "--panel is required")
    panel = io.read_panel_csv(args.panel, args.coords)
    if args.log_transform:
        panel = ObservationPanel(log_transform(panel.frame), panel.coords)
    return panel


def _bases_for(panel: ObservationPanel, args):
    bases = []
    for var in panel.variables:
        lo, hi = panel.domain(var)
        bases.append(make_basis(lo, hi, args.nbasis, args.order))
    return bases


def _load_sample(args):
    """Smoothed sample and unit coordinates (or None)."""
    coords_df = io.read_coords_csv(args.coords) if args.coords else None
    if args.sample:
        sample = io.read_sample(args.sample)
    else:
        panel = _load_panel(args)
        sample = smooth(panel, _bases_for(panel, args), args.penalty)
    coords = None
    if coords_df is not None:
        missing = [u for u in sample.unit_ids if u not in coords_df.index]
        if missing:
            raise CliError("E_UNIT_MISMATCH", f"coordinates missing for units {missing[:5]}")
        coords = coords_df.loc[list(sample.unit_ids), ["s1", "s2"]].to_numpy(float)
    return sample, coords


def parse_weights(spec: str, coords, n_units: int) -> SpatialWeights:
    """``knn:<k>``, ``rook``, ``queen``, ``bishop`` or ``file:<path>``.

    ``file:`` reads ``i,j,w`` weights or, without a ``w`` column, a symmetric
    ``i,j`` edge list.
    """
    spec = spec.strip()
    if spec.startswith("file:"):
        path = spec[5:]
        header = pd.read_csv(path, nrows=0).columns
        return read_weights_csv(path, n_units) if "w" in header else read_edge_list(path, n_units)
    if coords is None:
        raise CliError("E_MISSING_INPUT", f"--weights {spec} needs --coords")
    if spec.startswith("knn"):
        _, _, k = spec.partition(":")
        return knn_weights(coords, int(k) if k else 5)
    if spec in ("rook", "queen", "bishop"):
        cells = np.rint(coords).astype(int)
        if not np.allclose(cells, coords):
            raise CliError("E_BAD_WEIGHTS", "contiguity weights need integer lattice coordinates")
        return contiguity_weights(cells, spec)
    raise CliError("E_BAD_WEIGHTS", f"unknown weight specification {spec!r}")


def _weights(args, sample, coords) -> SpatialWeights:
    W = parse_weights(args.weights, coords, sample.n_units)
    if W.n_units != sample.n_units:
        raise CliError("E_UNIT_MISMATCH", "weights and sample have different unit counts")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IsolatedUnitsWarning)
        Wstd = row_standardize(W)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return Wstd


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------

def cmd_smooth(args) -> None:
    panel = _load_panel(args)
    sample = smooth(panel, _bases_for(panel, args), args.penalty)
    out = _out_dir(args)
    io.write_sample(sample, out)
    values = [evaluate(sample, j, g) for j, g in enumerate(sample.grid)]
    io.write_panel_csv(
        io.curves_frame(sample.unit_ids, sample.variable_ids, sample.grid, values), out / "curves.csv"
    )


def cmd_moran(args) -> None:
    sample, coords = _load_sample(args)
    W = _weights(args, sample, coords)
    sample, _ = center(sample)
    out = _out_dir(args)
    x = np.linspace(sample.bases[0].domain_lo, sample.bases[0].domain_hi, args.npoints)

    tr = trace_moran(sample, W, x, n_permutations=args.nperm, seed=args.seed)
    io.write_curve(tr.curve, out / "moran_curve.csv")
    io.write_test(tr, out / "trace_test.csv", seed=args.seed)

    # classical Moran of the evaluated curves treated as one panel matrix
    V = common_grid_values(sample, x)
    panel_values = np.hstack(list(V))
    pm = panel_moran_test(panel_values, W, n_permutations=args.nperm, seed=args.seed)
    io.write_test(pm, out / "panel_test.csv", seed=args.seed)

    if args.pair:
        k, l = _pair_indices(args.pair, sample.variable_ids)
        io.write_curve(bivariate_functional_moran(sample, k, l, W, x), out / "bivariate_curve.csv")
        bt = bivariate_trace_moran(sample, k, l, W, x, n_permutations=args.nperm, seed=args.seed)
        io.write_test(bt, out / "bivariate_test.csv", seed=args.seed)


def _pair_indices(pair: str, variable_ids):
    names = [p.strip() for p in pair.split(",")]
    if len(names) != 2:
        raise CliError("E_BAD_ARGUMENT", "--pair expects two comma-separated variable ids")
    ids = [str(v) for v in variable_ids]
    try:
        return tuple(ids.index(n) for n in names)
    except ValueError:
        raise CliError("E_BAD_ARGUMENT", f"--pair variables must be among {ids}") from None


def _component_table(result, W, nperm, seed, signs=None) -> pd.DataFrame:
    rows = []
    seeds = np.random.SeedSequence(seed).spawn(max(result.n_components, 1))
    for k in range(result.n_components):
        chi = result.scores[:, k]
        if np.allclose(chi, 0):
            moran, p = float("nan"), float("nan")
        else:
            test = moran_test(chi, W, nperm, seed=seeds[k])
            moran, p = test.statistic, test.p_value
        sign = "positive" if signs is None or signs[k] > 0 else "negative"
        rows.append(
            {
                "component": k + 1,
                "eigenvalue": result.eigenvalues[k],
                "sign": sign,
                "var_explained": result.var_explained[k],
                "score_moran": moran,
                "score_var_explained": result.score_var_explained[k],
                "p_value": p,
                "significance": "" if np.isnan(p) else significance_stars(p),
            }
        )
    return pd.DataFrame(
        rows,
        columns=["component", "eigenvalue", "sign", "var_explained", "score_moran",
                 "score_var_explained", "p_value", "significance"],
    )


def _eigenfunction_frame(result, sample, npoints) -> pd.DataFrame:
    pieces = []
    for j, (var, b) in enumerate(zip(sample.variable_ids, sample.bases)):
        x = np.linspace(b.domain_lo, b.domain_hi, npoints)
        phi = result.eigenfunctions(j, x)
        for k in range(result.n_components):
            pieces.append(pd.DataFrame({"component": k + 1, "variable": var, "x": x, "phi": phi[k]}))
    return pd.concat(pieces, ignore_index=True) if pieces else pd.DataFrame(
        columns=["component", "variable", "x", "phi"]
    )


def _scores_frame(result) -> pd.DataFrame:
    n, K = result.scores.shape
    return pd.DataFrame(
        {
            "unit": np.tile(np.asarray(result.unit_ids, dtype=object), K),
            "component": np.repeat(np.arange(1, K + 1), n),
            "score": result.scores.T.ravel(),
        }
    )


def cmd_spca(args) -> None:
    sample, coords = _load_sample(args)
    W = _weights(args, sample, coords)
    sample, _ = center(sample)
    out = _out_dir(args)
    p = sample.n_coef
    res = mfaspca(sample, W, min(args.npos, p), min(args.nneg, p - min(args.npos, p)))
    table = _component_table(res, W, args.nperm, args.seed, res.signs)
    table.to_csv(out / "eigen.csv", index=False, float_format=io.FLOAT_FORMAT)

    fp = mfpca(sample, min(args.nfpc, p))
    _component_table(fp, W, args.nperm, args.seed).to_csv(
        out / "fpca_eigen.csv", index=False, float_format=io.FLOAT_FORMAT
    )
    _scores_frame(res).to_csv(out / "scores.csv", index=False, float_format=io.FLOAT_FORMAT)
    _scores_frame(fp).to_csv(out / "fpca_scores.csv", index=False, float_format=io.FLOAT_FORMAT)
    _eigenfunction_frame(res, sample, args.npoints).to_csv(
        out / "eigenfunctions.csv", index=False, float_format=io.FLOAT_FORMAT
    )
    if coords is not None:
        score_table(res, coords).to_csv(out / "score_table.csv", index=False, float_format=io.FLOAT_FORMAT)


def cmd_reconstruct(args) -> None:
    sample, coords = _load_sample(args)
    raw = sample
    sample, mean = center(sample)
    p = sample.n_coef
    if args.method == "fpca":
        res = mfpca(sample, p if args.K is None else min(args.K, p))
    else:
        W = _weights(args, raw, coords)
        res = mfaspca(sample, W, min(args.npos, p), min(args.nneg, p - min(args.npos, p)))
    K = res.n_components if args.K is None else args.K
    if K > res.n_components:
        raise CliError("E_BAD_ARGUMENT", f"--K {K} exceeds the {res.n_components} available components")
    curves = reconstruct(mean, res, K, list(sample.grid))
    out = _out_dir(args)
    io.write_panel_csv(
        io.curves_frame(sample.unit_ids, sample.variable_ids, sample.grid, curves),
        out / "reconstruction.csv",
    )


_SIM_KEYS = {f for f in SimConfig.__dataclass_fields__}


def cmd_simulate(args) -> None:
    values = dict(args.sim_settings)
    if args.seed is not None:
        values["seed"] = args.seed
    if args.nperm_given:
        values["n_permutations"] = args.nperm
    config = SimConfig.from_mapping(values)
    table = run_experiment(config)
    out = _out_dir(args)
    table.to_csv(out / "experiment.csv", index=False, float_format=io.FLOAT_FORMAT)
    summarize_experiment(table).to_csv(out / "summary.csv", index=False, float_format=io.FLOAT_FORMAT)


# --- argument parsing ----------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="flat key = value file with defaults for these options")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--nperm", type=int, default=None, help="number of permutations (default 999)")
    if not data:
        return
    p.add_argument("--panel", help="long-format CSV unit,variable,x,value")
    p.add_argument("--coords", help="CSV unit,s1,s2")
    p.add_argument("--sample", help="directory written by 'smooth' (instead of --panel)")
    p.add_argument("--weights", default=None, help="knn:<k> | rook | queen | bishop | file:<path>")
    p.add_argument("--log-transform", action="store_true", default=None)
    p.add_argument("--nbasis", type=int, default=None)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--penalty", type=float, default=None)
    p.add_argument("--npos", type=int, default=None)
    p.add_argument("--nneg", type=int, default=None)
    p.add_argument("--npoints", type=int, default=None, help="evaluation grid size (default 101)")


_DEFAULTS = {
    "seed": 0, "out": "out", "nperm": 999, "weights": "knn:5", "log_transform": False,
    "nbasis": 10, "order": 4, "penalty": 0.0, "npos": 3, "nneg": 2, "npoints": 101,
    "nfpc": 4, "K": None, "method": "spca", "pair": None,
    "panel": None, "coords": None, "sample": None,
}
_TYPES = {"seed": int, "nperm": int, "nbasis": int, "order": int, "penalty": float, "npos": int,
          "nneg": int, "npoints": int, "nfpc": int, "K": int}


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors through :class:`CliError`."""

    def error(self, message):
        raise CliError("E_USAGE", f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfaspca", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("smooth", help="smooth a panel into B-spline coefficients")
    _add_common(p)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("moran", help="functional, trace and bivariate Moran's I with permutation tests")
    _add_common(p)
    p.add_argument("--pair", default=None, help="two variable ids 'k,l' for the bivariate curve")
    p.set_defaults(func=cmd_moran)

    p = sub.add_parser("spca", help="mfasPCA and classical MFPCA tables")
    _add_common(p)
    p.add_argument("--nfpc", type=int, default=None, help="classical components reported (default 4)")
    p.set_defaults(func=cmd_spca)

    p = sub.add_parser("reconstruct", help="reconstruct curves from K components")
    _add_common(p)
    p.add_argument("--K", type=int, default=None, help="number of components (default: all kept)")
    p.add_argument("--method", choices=["spca", "fpca"], default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("simulate", help="replicated simulation experiment")
    _add_common(p, data=False)
    p.set_defaults(func=cmd_simulate)
    return parser


def _read_config(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError("E_IO", f"cannot read config {path}: {exc.strerror}") from None
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise CliError("E_CONFIG", f"cannot parse config {path}: {exc.message.splitlines()[0]}") from None
    return {k.replace("-", "_"): v for k, v in parser["config"].items()}


def _resolve(args) -> argparse.Namespace:
    cfg = _read_config(args.config) if args.config else {}
    if args.command == "simulate":
        unknown = set(cfg) - _SIM_KEYS - {"out", "nperm"}
        if unknown:
            raise CliError("E_CONFIG", f"unknown config keys {sorted(unknown)}")
        args.sim_settings = {k: v for k, v in cfg.items() if k in _SIM_KEYS}
        if args.nperm is None and "nperm" in cfg:
            args.nperm = int(cfg["nperm"])
        args.nperm_given = args.nperm is not None
        args.out = args.out or cfg.get("out", _DEFAULTS["out"])
        return args
    unknown = set(cfg) - set(_DEFAULTS)
    if unknown:
        raise CliError("E_CONFIG", f"unknown config keys {sorted(unknown)}")
    for key, default in _DEFAULTS.items():
        if key not in vars(args) or getattr(args, key) is not None:
            continue
        if key in cfg:
            raw = cfg[key]
            if key == "log_transform":
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                value = _TYPES.get(key, str)(raw)
        else:
            value = default
        setattr(args, key, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _resolve(parser.parse_args(argv))
        args.func(args)
    except CliError as exc:
        return _fail(exc.code, str(exc))
    except FileNotFoundError as exc:
        return _fail("E_IO", f"file not found: {exc.filename}")
    except (ValueError, KeyError, np.linalg.LinAlgError) as exc:
        return _fail("E_INPUT", str(exc))
    return 0


def _fail(code: str, message: str) -> int:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return 2 if code in ("E_IO", "E_MISSING_INPUT", "E_USAGE") else 1


if __name__ == "__main__":
    sys.exit(main())
