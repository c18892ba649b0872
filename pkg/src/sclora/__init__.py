"""Subspace-constrained low-rank adapter initialization toolkit.

Pipeline: accumulate per-task output-activation covariances, select the
balanced subspace maximizing captured fine-tuning signal minus preserved
signal, initialize the adapter inside it, and (optionally) run the
two-task trade-off sweep.
"""

from .adapter import (
    PISSA,
    SC_LORA,
    SCHEMES,
    VANILLA,
    AdapterPair,
    init_pissa,
    init_sc_lora,
    init_vanilla,
)
from .covariance import (
    ActivationCovariance,
    RankDeficiencyVerdict,
    TaskCovariance,
    clip_tokens,
    rank_deficiency_check,
)
from .linalg import (
    EigenDecomposition,
    JacobiConvergenceError,
    eig_sym,
    frobenius_norm,
    mat_mul,
    svd_thin,
    symmetrize,
)
from .subspace import (
    DegenerateSubspaceWarning,
    RewardValue,
    SubspaceSelector,
    delta_cov,
    project,
    reward,
    reward_oracle_max,
    select_subspace,
)
from .trainer import (
    SweepConfig,
    SweepRecord,
    SweepReport,
    TrainConfig,
    TrainingDivergedError,
    TwoTaskDataset,
    beta_sweep,
    eval_preservation,
    gen_two_task_data,
    initialization_covariances,
    task_loss,
    train_adapter,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationCovariance",
    "AdapterPair",
    "DegenerateSubspaceWarning",
    "EigenDecomposition",
    "JacobiConvergenceError",
    "PISSA",
    "RankDeficiencyVerdict",
    "RewardValue",
    "SC_LORA",
    "SCHEMES",
    "SubspaceSelector",
    "SweepConfig",
    "SweepRecord",
    "SweepReport",
    "TaskCovariance",
    "TrainConfig",
    "TrainingDivergedError",
    "TwoTaskDataset",
    "VANILLA",
    "beta_sweep",
    "clip_tokens",
    "delta_cov",
    "eig_sym",
    "eval_preservation",
    "frobenius_norm",
    "gen_two_task_data",
    "init_pissa",
    "init_sc_lora",
    "init_vanilla",
    "initialization_covariances",
    "mat_mul",
    "project",
    "rank_deficiency_check",
    "reward",
    "reward_oracle_max",
    "select_subspace",
    "svd_thin",
    "symmetrize",
    "task_loss",
    "train_adapter",
]
