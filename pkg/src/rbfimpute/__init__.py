"""Missing-value imputation for multivariate time series.

Two-stage approach: a shared-basis Gaussian RBF bank is grown stagewise to
produce one smooth continuous function per variable, and a bidirectional
recurrent refiner consumes those functions (plus masks and time gaps) to
exploit temporal and cross-variable structure, which matters most for long
missing runs.
"""

from .bank import (
    BankFormatError,
    ContinuousFunction,
    GrbfBank,
    cf_eval,
    cf_eval_series,
    grbf_eval,
    impute_with_cf,
    load_bank,
    save_bank,
)
from .data import (
    CorruptionSpec,
    GroundTruthPair,
    corrupt,
    inject_long_term,
    inject_random,
    load_csv,
    lorenz96,
    save_csv,
)
from .evaluation import (
    AblationResult,
    ImputationReport,
    evaluate,
    impute_variant,
    knn_baseline,
    mean_baseline,
    run_ablation,
    summarize_ablation,
)
from .fitting import StageReport, TrainConfig, fit, fit_and_impute
from .recurrent import (
    CellTrace,
    MirnnLoss,
    MirnnParams,
    ModelFormatError,
    RecurrentTrainConfig,
    bidirectional_forward,
    impute_mirnn,
    init_params,
    load_model,
    refine_series,
    save_model,
    sequence_forward,
    train,
)
from .series import (
    MultivariateSeries,
    NormalizationStats,
    TimeGapMatrix,
    denormalize,
    new_series,
    normalize,
    split_windows,
    time_gap,
)

__version__ = "0.1.0"

__all__ = [
    "AblationResult",
    "BankFormatError",
    "CellTrace",
    "ContinuousFunction",
    "CorruptionSpec",
    "GrbfBank",
    "GroundTruthPair",
    "ImputationReport",
    "MirnnLoss",
    "MirnnParams",
    "ModelFormatError",
    "MultivariateSeries",
    "NormalizationStats",
    "RecurrentTrainConfig",
    "StageReport",
    "TimeGapMatrix",
    "TrainConfig",
    "bidirectional_forward",
    "cf_eval",
    "cf_eval_series",
    "corrupt",
    "denormalize",
    "evaluate",
    "fit",
    "fit_and_impute",
    "grbf_eval",
    "impute_mirnn",
    "impute_variant",
    "impute_with_cf",
    "init_params",
    "inject_long_term",
    "inject_random",
    "knn_baseline",
    "load_bank",
    "load_csv",
    "load_model",
    "lorenz96",
    "mean_baseline",
    "new_series",
    "normalize",
    "refine_series",
    "run_ablation",
    "save_bank",
    "save_csv",
    "save_model",
    "sequence_forward",
    "split_windows",
    "summarize_ablation",
    "time_gap",
    "train",
]
