import numpy as np
import pytest

from mfaspca.basis import FunctionalSample, center, make_basis
from mfaspca.weights import SpatialWeights


def random_sample(rng, n=6, d=1, n_basis=6, order=4, domains=None, centered=True):
    """Random coefficient sample; centered by default."""
    domains = domains or [(0.0, 1.0)] * d
    bases = tuple(make_basis(lo, hi, n_basis, order) for lo, hi in domains)
    coefs = tuple(rng.standard_normal((n, n_basis)) for _ in range(d))
    sample = FunctionalSample.from_coefs(bases, coefs)
    return center(sample)[0] if centered else sample


def random_weights(rng, n, density=0.4):
    """Dense nonnegative weights with an empty diagonal and no isolated rows."""
    A = rng.uniform(0.1, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < density)
    np.fill_diagonal(A, 0.0)
    for i in range(n):
        if not A[i].any():
            A[i, (i + 1) % n] = 1.0
    return A


def swap_weights():
    return SpatialWeights(np.array([[0.0, 1.0], [1.0, 0.0]]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance report ---------------------------------------------------------

ACCEPTANCE: dict = {}


def record(number: int, ok, detail: str) -> None:
    """Store one acceptance line; ``ok`` is True, False or None (skipped)."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[None if ok is None else bool(ok)]
    ACCEPTANCE[number] = f"criterion {number}: {status}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
