"""Gaussian Markov random fields on compact metric graphs.

Exact sparse-precision models for the Markov smoothness orders (alpha = 1
and 2): graph handling, precision assembly, simulation, likelihoods,
maximum-likelihood fitting, and kriging at arbitrary points on the network.
"""

from .graph import (
    GraphSurgeryMap,
    MetricGraph,
    PointOnEdge,
    geodesic_distance,
    merge_degree2,
    split_loops_and_subdivide,
)
from .kernels import (
    EdgeGaussian,
    ModelParams,
    closed_form_circle,
    closed_form_interval,
    edge_conditional_cov,
    edge_precision,
    matern_cov,
)
from .sparse import SparseSymmetric
from .constrained import (
    BlockDiagCov,
    ConstrainedModel,
    ConstraintSystem,
    DiagonalCov,
    adjust_marginal,
    change_of_basis,
    constrained_loglik,
    constrained_posterior,
)
from .precision import (
    assemble_alpha1,
    assemble_alpha1_adjusted,
    assemble_alpha2_system,
    extended_precision,
)
from .simulate import (
    FieldSample,
    KLBasis,
    kl_covariance,
    kl_simulate,
    kl_truncation_error,
    sample_bridge,
    sample_vertices,
    simulate_field,
)
from .inference import (
    Dataset,
    FitResult,
    covariance_trace,
    fit_mle,
    krig_predict,
    loglik,
    loglik_alpha1_extended,
    loglik_alpha1_integrated,
    loglik_alpha2,
    variance_trace,
)
from .laplacian import laplacian_precision, scaled_comparison, uniform_subdivision

__version__ = "0.1.0"
