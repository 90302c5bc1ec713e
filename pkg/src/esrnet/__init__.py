"""esrnet: convolutional ensembles sharing a trunk of early layers.

The usual entry points: :func:`load_architecture` + :func:`train_esr` for
scripted work, :class:`EsrClassifier` for the scikit-learn surface, and the
``esrnet`` command line for everything file-shaped.
"""

__version__ = "0.1.0"

from . import autograd
from .architecture import (
    ArchitectureConfig,
    StageSpec,
    ensemble_parameter_count,
    load_architecture,
    parameter_plan,
    save_architecture,
)
from .autograd import Parameter, Tensor, backward
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimators import EsrClassifier
from .explain import (
    branch_saliency_maps,
    diversity_score,
    grad_cam,
    render_heatmap,
)
from .metrics import (
    MetricsReport,
    ensemble_affect,
    ensemble_vote,
    evaluate,
    paired_t_test,
    ResidualErrorReport,
    residual_error_report,
)
from .model import EsrModel, build
from .training import (
    LrSchedule,
    TrainConfig,
    TrainData,
    TrainingDiverged,
    TrainResult,
    fine_tune_affect,
    fine_tune_transfer,
    extend_esr,
    train_esr,
    train_interleaved,
    train_traditional_ensemble,
)

__all__ = [
    "__version__",
    "autograd",
    "Tensor",
    "Parameter",
    "backward",
    "ArchitectureConfig",
    "StageSpec",
    "load_architecture",
    "save_architecture",
    "parameter_plan",
    "ensemble_parameter_count",
    "EsrModel",
    "build",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "TrainData",
    "TrainConfig",
    "LrSchedule",
    "TrainResult",
    "TrainingDiverged",
    "extend_esr",
    "train_esr",
    "train_interleaved",
    "train_traditional_ensemble",
    "fine_tune_affect",
    "fine_tune_transfer",
    "MetricsReport",
    "evaluate",
    "ensemble_vote",
    "ensemble_affect",
    "paired_t_test",
    "ResidualErrorReport",
    "residual_error_report",
    "grad_cam",
    "branch_saliency_maps",
    "diversity_score",
    "render_heatmap",
    "EsrClassifier",
]
