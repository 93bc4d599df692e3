"""Bias-corrected Gram matrix estimation for data with missing values."""

__version__ = "0.1.0"

from .clustering import kmeans, spectral_clustering
from .dimred import Embedding, cng_scree, pc_space_distances, pca_from_gram
from .dropout import DropoutCall, EnsembleConfig, infer_dropouts
from .errors import (
    BcgramError,
    ConfigError,
    DegenerateClusteringError,
    DomainError,
    EstimationError,
    ParseError,
)
from .evaluation import (
    ExperimentConfig,
    VerificationConfig,
    ari,
    run_estimator_verification,
    run_missingness_experiment,
    simulate_ppca,
)
from .gram import (
    EstimatorKind,
    GramEstimate,
    VarianceReport,
    bc_gram_heterogeneous,
    bc_gram_homogeneous,
    gram_to_sq_dist,
    kl_to_covariance,
    moments_under_missingness,
    naive_gram,
    sq_dist_to_gram,
    variance_bounds,
    variance_exact,
    variance_report,
)
from .matrix_io import ObservedMatrix, read_matrix, write_matrix
from .missingness import (
    MechanismSpec,
    ProbabilityModel,
    apply_missingness,
    estimate_probabilities,
    sample_mask,
)
