"""Training-free initialization of linear classifier heads in federated
setups: clients upload class statistics once, the server estimates class
covariances from the received means alone, and the head comes out of a single
regularized solve. No gradients, no model updates, no raw feature exchange.
"""

from .classifier import (ClassifierWeights, EvalResult, ScatterVariant,
                         build_B, build_G_variant, evaluate, fedncm_weights,
                         predict, read_weights, ridge_solve,
                         solve_and_normalize, write_weights)
from .client import (ClientOracleStats, ClientSecondOrder, ClientShare,
                     ShareEntry, compute_all_shares, compute_class_covariances,
                     compute_class_means, compute_gram_stats)
from .errors import (ConfigError, DataFormatError, FedInitError,
                     InsufficientMeansError, SolveError)
from .experiment import (ExperimentConfig, ExperimentResult, load_config,
                         parse_config, run_experiment, write_report)
from .features import (FeatureDataset, SyntheticSpec, anisotropic_covariance,
                       gaussian_benchmark_spec, generate_synthetic,
                       read_dataset, summarize, write_dataset)
from .methods import METHODS, shares_for, share_values, solve_from_shares
from .partition import (ClientAssignment, dirichlet_partition,
                        load_assignment, partition_stats, write_assignment)
from .privacy import (NoiseSpec, perturb_counts, secure_phase1, secure_phase2,
                      verify_mask_cancellation)
from .server import (CovarianceEstimate, GlobalMeans, ServerAccumulator,
                     aggregate_gram, aggregate_means,
                     aggregate_oracle_covariances, estimate_covariances)

__version__ = "0.1.0"

__all__ = [
    "ClassifierWeights", "EvalResult", "ScatterVariant", "build_B",
    "build_G_variant", "evaluate", "fedncm_weights", "predict",
    "read_weights", "ridge_solve", "solve_and_normalize", "write_weights",
    "ClientOracleStats", "ClientSecondOrder", "ClientShare", "ShareEntry",
    "compute_all_shares", "compute_class_covariances", "compute_class_means",
    "compute_gram_stats",
    "ConfigError", "DataFormatError", "FedInitError",
    "InsufficientMeansError", "SolveError",
    "ExperimentConfig", "ExperimentResult", "load_config", "parse_config",
    "run_experiment", "write_report",
    "FeatureDataset", "SyntheticSpec", "anisotropic_covariance",
    "gaussian_benchmark_spec", "generate_synthetic", "read_dataset",
    "summarize", "write_dataset",
    "METHODS", "shares_for", "share_values", "solve_from_shares",
    "ClientAssignment", "dirichlet_partition", "load_assignment",
    "partition_stats", "write_assignment",
    "NoiseSpec", "perturb_counts", "secure_phase1", "secure_phase2",
    "verify_mask_cancellation",
    "CovarianceEstimate", "GlobalMeans", "ServerAccumulator",
    "aggregate_gram", "aggregate_means", "aggregate_oracle_covariances",
    "estimate_covariances",
    "__version__",
]
