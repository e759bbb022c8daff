"""Order-aware tabular prediction: learn a causal column order, predict under it."""

from .autodiff import Tensor, grad_check, precision, set_precision
from .estimator import TabOrderImputer
from .metrics import (
    imputation_rmse,
    pairwise_flip_fraction,
    rank_shift,
    topological_divergence,
)
from .model import (
    ModelConfig,
    TabOrderModel,
    build_mask_bias,
    extract_order,
    hard_mask,
    pointwise_variance,
    scores_for_order,
)
from .scm import Dag, Table, sample_chain, sample_dag, sample_scm, sample_table
from .theory import gain, gain_derivative, snr_backward, snr_forward, theorem_check
from .training import (
    TrainConfig,
    finetune,
    gaussian_nll,
    load_checkpoint,
    mask_entries,
    save_checkpoint,
    standardize,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "Dag",
    "ModelConfig",
    "TabOrderImputer",
    "TabOrderModel",
    "Table",
    "Tensor",
    "TrainConfig",
    "build_mask_bias",
    "extract_order",
    "finetune",
    "gain",
    "gain_derivative",
    "gaussian_nll",
    "grad_check",
    "hard_mask",
    "imputation_rmse",
    "load_checkpoint",
    "mask_entries",
    "pairwise_flip_fraction",
    "pointwise_variance",
    "precision",
    "rank_shift",
    "sample_chain",
    "sample_dag",
    "sample_scm",
    "sample_table",
    "save_checkpoint",
    "scores_for_order",
    "set_precision",
    "snr_backward",
    "snr_forward",
    "standardize",
    "theorem_check",
    "topological_divergence",
    "train_loop",
]
