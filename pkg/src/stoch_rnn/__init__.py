from stoch_rnn.cache import DiskFeatureCache, MemoryFeatureCache
from stoch_rnn.config import ExperimentConfig, load_config
from stoch_rnn.evaluation import (
    accuracy,
    accuracy_experiment,
    bound_check_experiment,
    classify_noiseless,
    classify_stochastic,
    pac_bound,
    robustness_experiment,
    sample_complexity,
    simulate_sde,
    table_experiment,
    vc_bound,
)
from stoch_rnn.features import (
    basis_means,
    compute_mean,
    mean_from_signature,
    partial_signature,
    truncation_error_bound,
)
from stoch_rnn.interface import (
    AccuracyResult,
    BasisMeans,
    BoundInputs,
    ExperimentRecord,
    ExperimentReport,
    LabeledDataset,
    MeanVector,
    ModelParams,
    PartialSignature,
    Path,
    ReservoirSystem,
    SvmSolution,
    TrainConfig,
    TrainResult,
)
from stoch_rnn.learn import (
    empirical_risk,
    erm_train,
    loss,
    risk_gradient,
    svm_baseline,
    train_model,
    truncated_erm_train,
)
from stoch_rnn.paths import (
    corrupt_labels,
    dataset_radius,
    gen_trig_dataset,
    load_japanese_vowels,
    train_test_split,
)
from stoch_rnn.pool import TaskPool
from stoch_rnn.reservoir import build_reservoir, compute_covariance
from stoch_rnn.utils import (
    DataParseError,
    DegenerateDirectionError,
    DomainError,
    NumericalError,
    RegimeError,
    StochRNNError,
)

__all__ = [
    "Path",
    "LabeledDataset",
    "ReservoirSystem",
    "PartialSignature",
    "MeanVector",
    "BasisMeans",
    "ModelParams",
    "TrainConfig",
    "TrainResult",
    "SvmSolution",
    "BoundInputs",
    "AccuracyResult",
    "ExperimentRecord",
    "ExperimentReport",
    "ExperimentConfig",
    "load_config",
    "gen_trig_dataset",
    "load_japanese_vowels",
    "train_test_split",
    "corrupt_labels",
    "dataset_radius",
    "build_reservoir",
    "compute_covariance",
    "compute_mean",
    "basis_means",
    "partial_signature",
    "mean_from_signature",
    "truncation_error_bound",
    "loss",
    "empirical_risk",
    "risk_gradient",
    "erm_train",
    "truncated_erm_train",
    "train_model",
    "svm_baseline",
    "classify_noiseless",
    "classify_stochastic",
    "simulate_sde",
    "accuracy",
    "pac_bound",
    "sample_complexity",
    "vc_bound",
    "accuracy_experiment",
    "bound_check_experiment",
    "robustness_experiment",
    "table_experiment",
    "MemoryFeatureCache",
    "DiskFeatureCache",
    "TaskPool",
    "StochRNNError",
    "DomainError",
    "DataParseError",
    "RegimeError",
    "DegenerateDirectionError",
    "NumericalError",
]
