"""Functional Moran's I statistics and multivariate functional areal spatial PCA."""

from mfaspca._backend import BACKEND
from mfaspca.basis import (
    BasisSystem,
    FunctionalSample,
    ObservationPanel,
    center,
    evaluate,
    make_basis,
    orthonormal_scores,
    smooth,
)
from mfaspca.moran import (
    MoranCurve,
    MoranResult,
    bivariate_functional_moran,
    bivariate_trace_moran,
    classical_moran,
    functional_moran_curve,
    moran_test,
    panel_moran,
    permutation_test,
    trace_moran,
)
from mfaspca.spca import (
    FpcaResult,
    SpcaResult,
    mfaspca,
    mfpca,
    reconstruct,
    score_table,
    variance_explained,
)
from mfaspca.weights import (
    SpatialWeights,
    contiguity_weights,
    knn_weights,
    row_standardize,
    symmetrized_product,
)

__version__ = "0.1.0"
