import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson

from mfaspca.basis import FunctionalSample, center, evaluate, make_basis, orthonormal_scores
from mfaspca.sim import SimConfig, sar_solve
from mfaspca.spca import (
    DegenerateSampleError,
    mfaspca,
    mfpca,
    reconstruct,
    reconstruct_coefs,
    score_table,
    variance_explained,
)
from mfaspca.weights import SpatialWeights, contiguity_weights, lattice_cells, row_standardize

from conftest import random_sample, random_weights, swap_weights


def _standardized(A):
    s = A.sum(axis=1, keepdims=True)
    return np.divide(A, s, out=np.zeros_like(A), where=s > 0)


def _dense_H(sample, A):
    X = orthonormal_scores(sample)
    Ws = _standardized(A)
    return X.T @ (Ws + Ws.T) @ X / (2 * X.shape[0])


def _align(U, V):
    """Flip columns of V to best match U."""
    return V * np.sign(np.sum(U * V, axis=0))


# --- mfaspca ------------------------------------------------------------------

def test_swap_opposite_curves_pure_local():
    b = make_basis(0.0, 1.0, 2, 2)
    c = np.array([1.0, 0.4])
    sample = FunctionalSample.from_coefs([b], [np.vstack([c, -c])], centered=True)
    res = mfaspca(sample, swap_weights(), n_pos=1, n_neg=1)
    assert res.n_components == 1 and res.n_pos_kept == 0 and res.n_neg_kept == 1
    var = res.scores[:, 0] @ res.scores[:, 0] / 2
    assert res.eigenvalues[0] == pytest.approx(-var, rel=1e-12)
    assert res.eigenvalues[0] < 0
    assert res.score_moran[0] == pytest.approx(-1.0, rel=1e-12)


def test_swap_identical_curves_degenerate():
    b = make_basis(0.0, 1.0, 4, 4)
    c = np.array([1.0, 0.4, -2.0, 0.0])
    sample, _ = center(FunctionalSample.from_coefs([b], [np.vstack([c, c])]))
    np.testing.assert_array_equal(sample.coefs[0], 0.0)
    with pytest.raises(DegenerateSampleError):
        mfaspca(sample, swap_weights(), 1, 1)


@pytest.mark.parametrize("seed", range(5))
def test_matches_dense_eigensolver(seed):
    rng = np.random.default_rng(seed)
    sample = random_sample(rng, n=8, n_basis=5)
    A = random_weights(rng, 8)
    res = mfaspca(sample, SpatialWeights(A), n_pos=3, n_neg=2)
    vals, vecs = np.linalg.eigh(_dense_H(sample, A))
    np.testing.assert_allclose(np.sort(res.all_eigenvalues), vals, atol=1e-12)
    for k in range(res.n_components):
        i = np.argmin(np.abs(vals - res.eigenvalues[k]))
        assert res.eigenvalues[k] == pytest.approx(vals[i], rel=1e-8)
        u = vecs[:, i]
        np.testing.assert_allclose(res.loadings[:, k], u * np.sign(u @ res.loadings[:, k]), atol=1e-8)


def test_keeps_extremes_ordered_by_magnitude(rng):
    sample = random_sample(rng, n=12, d=2, n_basis=6)
    A = random_weights(rng, 12)
    res = mfaspca(sample, A, n_pos=3, n_neg=2)
    vals = np.sort(res.all_eigenvalues)
    expected = np.concatenate([vals[::-1][:3][vals[::-1][:3] > 0], vals[:2][vals[:2] < 0]])
    np.testing.assert_allclose(np.sort(res.eigenvalues), np.sort(expected), rtol=1e-12)
    mags = np.abs(res.eigenvalues)
    assert np.all(np.diff(mags) <= 1e-15)
    assert res.signs.tolist() == np.sign(res.eigenvalues).astype(int).tolist()


def test_ties_put_positive_first():
    # on a 6-cycle, cos(pi i/3) and cos(2 pi i/3) have Moran's I of +1/2 and -1/2
    # and equal norms, so H = diag(1/4, -1/4) in an orthonormal basis
    i = np.arange(6)
    ring = np.zeros((6, 6))
    ring[i, (i + 1) % 6] = ring[i, (i - 1) % 6] = 1.0
    b = make_basis(0.0, 1.0, 2, 2)
    ident = dataclasses.replace(b, gram=np.eye(2), orth_factor=np.eye(2))
    C = np.column_stack([np.cos(2 * np.pi * i / 6), np.cos(4 * np.pi * i / 6)])
    for cols in (C, C[:, ::-1]):
        sample = FunctionalSample.from_coefs([ident], [cols], centered=True)
        res = mfaspca(sample, SpatialWeights(ring), n_pos=1, n_neg=1)
        np.testing.assert_allclose(res.eigenvalues, [0.25, -0.25], rtol=1e-12)
        assert res.signs.tolist() == [1, -1]
        assert res.sign_rank() == [(1, 1), (-1, 1)]


def test_sign_convention_and_reproducibility(rng):
    sample = random_sample(rng, n=10, n_basis=7)
    A = random_weights(rng, 10)
    a = mfaspca(sample, A)
    b = mfaspca(sample, A)
    np.testing.assert_array_equal(a.loadings, b.loadings)
    idx = np.argmax(np.abs(a.loadings), axis=0)
    assert np.all(a.loadings[idx, np.arange(a.n_components)] > 0)


def test_errors(rng):
    sample = random_sample(rng, n=6, n_basis=4)
    A = random_weights(rng, 6)
    with pytest.raises(ValueError):
        mfaspca(random_sample(rng, n=6, n_basis=4, centered=False), A)
    with pytest.raises(ValueError):
        mfaspca(sample, A, n_pos=3, n_neg=2)
    with pytest.raises(ValueError):
        mfaspca(sample, random_weights(rng, 5))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 15), d=st.integers(1, 3))
def test_eigen_identities(seed, n, d):
    rng = np.random.default_rng(seed)
    sample = random_sample(rng, n=n, d=d, n_basis=4)
    A = random_weights(rng, n)
    p = 4 * d
    res = mfaspca(sample, A, n_pos=min(2, p), n_neg=min(2, p - 2))
    U = res.loadings
    np.testing.assert_allclose(U.T @ U, np.eye(res.n_components), atol=1e-10)
    Ws = _standardized(A)
    for k in range(res.n_components):
        chi = res.scores[:, k]
        var = chi @ chi / n
        moran = chi @ Ws @ chi / (chi @ chi)
        assert res.eigenvalues[k] == pytest.approx(var * moran, rel=1e-8)
    H = _dense_H(sample, A)
    assert res.all_eigenvalues.sum() == pytest.approx(np.trace(H), rel=1e-8, abs=1e-14)


def test_eigenfunctions_orthonormal(rng):
    domains = [(0.0, 1.0), (2.0, 6.0)]
    sample = random_sample(rng, n=15, d=2, n_basis=7, domains=domains)
    res = mfaspca(sample, random_weights(rng, 15), n_pos=3, n_neg=2)
    G = np.zeros((res.n_components, res.n_components))
    for j, (lo, hi) in enumerate(domains):
        x = np.linspace(lo, hi, 2001)
        phi = res.eigenfunctions(j, x)
        G += simpson(phi[:, None, :] * phi[None, :, :], x=x, axis=2)
    np.testing.assert_allclose(G, np.eye(res.n_components), atol=1e-6)


def test_symmetric_weights_match_plain_quadratic_form(rng):
    sample = random_sample(rng, n=16, n_basis=6)
    W = contiguity_weights(lattice_cells(4, 4), "rook")
    # unstandardized rook weights stay symmetric
    res = mfaspca(sample, W, n_pos=3, n_neg=3, standardize=False)
    X = orthonormal_scores(sample)
    vals = np.linalg.eigh(X.T @ W.toarray() @ X / 16)[0]
    np.testing.assert_allclose(np.sort(res.all_eigenvalues), vals, atol=1e-14)


def test_identity_weights_reproduce_mfpca(rng):
    sample = random_sample(rng, n=12, d=2, n_basis=5)
    res = mfaspca(sample, np.eye(12), n_pos=4, n_neg=0, standardize=False)
    fp = mfpca(sample, 4)
    np.testing.assert_allclose(res.eigenvalues, fp.eigenvalues, rtol=1e-10)
    np.testing.assert_allclose(np.abs(res.loadings.T @ fp.loadings), np.eye(4), atol=1e-8)
    np.testing.assert_allclose(res.score_var_explained, fp.var_explained, rtol=1e-10)


def test_var_explained_conventions(rng):
    sample = random_sample(rng, n=20, n_basis=8)
    res = mfaspca(sample, random_weights(rng, 20), n_pos=3, n_neg=3)
    vals = res.all_eigenvalues
    tol = 1e-12 * np.abs(vals).max()
    pos, neg = vals[vals > tol].sum(), -vals[vals < -tol].sum()
    expected = np.where(res.eigenvalues > 0, res.eigenvalues / pos, -res.eigenvalues / neg) * 100
    np.testing.assert_allclose(res.var_explained, expected, rtol=1e-12)
    np.testing.assert_allclose(res.score_var_explained, variance_explained(res), rtol=1e-12)
    assert np.all(res.score_var_explained <= 100.0)


# --- mfpca ----------------------------------------------------------------------

def test_mfpca_rank_one(rng):
    b = make_basis(0.0, 1.0, 6, 4)
    c = rng.standard_normal(6)
    sample, _ = center(FunctionalSample.from_coefs([b], [np.outer(rng.standard_normal(9), c)]))
    fp = mfpca(sample)
    assert fp.eigenvalues[0] > 0
    np.testing.assert_allclose(fp.eigenvalues[1:], 0.0, atol=1e-12 * fp.eigenvalues[0])
    assert fp.var_explained[0] == pytest.approx(100.0)
    assert variance_explained(fp)[0] == pytest.approx(100.0)


def test_mfpca_full_var_explained_sums_to_100(rng):
    fp = mfpca(random_sample(rng, n=10, d=2, n_basis=6))
    assert fp.var_explained.sum() == pytest.approx(100.0, abs=1e-10)
    np.testing.assert_allclose(variance_explained(fp), fp.var_explained, atol=1e-10)


def test_mfpca_matches_grid_covariance_eigenanalysis(rng):
    sample = random_sample(rng, n=25, n_basis=8)
    fp = mfpca(sample, 3)
    x = np.linspace(0.0, 1.0, 2001)
    V = evaluate(sample, 0, x)
    w = np.full(x.size, 1.0)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= (x[1] - x[0]) / 3.0
    sw = np.sqrt(w)
    Ksym = (V * sw).T @ (V * sw) / V.shape[0]
    lam, E = np.linalg.eigh(Ksym)
    lam, E = lam[::-1][:3], E[:, ::-1][:, :3]
    phi = E / sw[:, None]
    scores = (V * w) @ phi
    np.testing.assert_allclose(fp.eigenvalues, lam, rtol=1e-4)
    np.testing.assert_allclose(fp.scores, _align(fp.scores, scores), atol=1e-4 * np.abs(scores).max())


def test_mfpca_errors(rng):
    with pytest.raises(ValueError):
        mfpca(random_sample(rng, n=5, n_basis=4), 5)
    with pytest.raises(ValueError):
        mfpca(random_sample(rng, n=5, centered=False))


def test_variance_explained_zero_score_and_errors(rng):
    fp = mfpca(random_sample(rng, n=8, n_basis=5))
    zeroed = dataclasses.replace(fp, scores=np.zeros_like(fp.scores))
    np.testing.assert_array_equal(variance_explained(zeroed), 0.0)
    with pytest.raises(ValueError):
        variance_explained(fp, 0.0)


# --- reconstruction ----------------------------------------------------------------

def _recon_error(sample, mean, result, K):
    coefs = reconstruct_coefs(mean, result, K)
    raw = [c + m for c, m in zip(sample.coefs, mean)]
    return sum(
        np.sum(((r - c) @ b.orth_factor.T) ** 2) for r, c, b in zip(raw, coefs, sample.bases)
    ) / sample.n_units


def test_reconstruction_full_and_empty(rng):
    raw = random_sample(rng, n=9, d=2, n_basis=5, centered=False)
    sample, mean = center(raw)
    fp = mfpca(sample)
    x = np.linspace(0.0, 1.0, 37)
    full = reconstruct(mean, fp, fp.n_components, x)
    empty = reconstruct(mean, fp, 0, x)
    for j in range(2):
        np.testing.assert_allclose(full[j], evaluate(raw, j, x), atol=1e-8)
        np.testing.assert_allclose(empty[j], np.tile(mean[j] @ raw.bases[j].design(x).T, (9, 1)), atol=1e-12)
    with pytest.raises(ValueError):
        reconstruct(mean, fp, fp.n_components + 1, x)


def test_reconstruction_error_is_eigenvalue_tail(rng):
    raw = random_sample(rng, n=14, d=2, n_basis=6, centered=False)
    sample, mean = center(raw)
    fp = mfpca(sample)
    errors = [_recon_error(sample, mean, fp, K) for K in range(fp.n_components + 1)]
    assert np.all(np.diff(errors) <= 1e-12 * errors[0])
    for K, err in enumerate(errors[:-1]):
        assert err == pytest.approx(fp.eigenvalues[K:].sum(), rel=1e-8)


def test_reconstruct_per_variable_grids(rng):
    raw = random_sample(rng, n=5, d=2, n_basis=5, domains=[(0, 1), (2, 3)], centered=False)
    sample, mean = center(raw)
    fp = mfpca(sample)
    grids = [np.linspace(0, 1, 11), np.linspace(2, 3, 7)]
    out = reconstruct(mean, fp, fp.n_components, grids)
    assert out[0].shape == (5, 11) and out[1].shape == (5, 7)
    np.testing.assert_allclose(out[1], evaluate(raw, 1, grids[1]), atol=1e-8)


# --- score tables -------------------------------------------------------------------

def test_score_table_signs(rng):
    sample = random_sample(rng, n=4, n_basis=4)
    fp = mfpca(sample, 2)
    fake = dataclasses.replace(fp, scores=np.array([[1.0, 0.0], [2.0, -1.0], [0.5, 0.0], [3.0, 2.0]]))
    coords = rng.uniform(size=(4, 2))
    table = score_table(fake, coords)
    first = table[table["component"] == 1]
    assert (first["sign"] == "positive").all()
    zero = table[(table["component"] == 2) & (table["score"] == 0)]
    assert len(zero) == 2 and (zero["abs_score"] == 0).all()
    assert list(table.columns) == ["unit", "s1", "s2", "component", "score", "abs_score", "sign"]
    with pytest.raises(ValueError):
        score_table(fake, coords[:3])


def _two_cluster_sample(seed):
    rng = np.random.default_rng(seed)
    cells = lattice_cells(10, 10)
    W = contiguity_weights(cells, "queen")
    labels = np.array([1.0 if c < 5 else -1.0 for _, c in cells])
    t = np.linspace(0.0, 1.0, 41)
    X = labels[:, None] * np.sin(np.pi * t)[None, :] + rng.normal(0, 0.5, (100, t.size))
    Y = sar_solve(row_standardize(W), X, 0.5)
    b = make_basis(0.0, 1.0, 8, 4)
    coefs = np.linalg.lstsq(b.design(t), Y.T, rcond=None)[0].T
    sample, _ = center(FunctionalSample.from_coefs([b], [coefs]))
    return sample, W, labels


def test_leading_global_component_separates_clusters():
    hits = 0
    for seed in range(50):
        sample, W, labels = _two_cluster_sample(seed)
        res = mfaspca(sample, W, n_pos=1, n_neg=1)
        assert res.signs[0] == 1
        corr = np.corrcoef(np.sign(res.scores[:, 0]), labels)[0, 1]
        hits += abs(corr) > 0.5
    assert hits >= 45
