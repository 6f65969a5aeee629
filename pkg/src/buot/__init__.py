"""Bi-level unbalanced optimal transport for partial domain adaptation.

The package layers, bottom to top: entropic OT / unbalanced-OT scaling
solvers (`buot.ot`), the label-aware cost with its fast contraction kernel
and the alternating bi-level solver (`buot.bilevel`), plan recovery into
per-class weights (`buot.recovery`), a linear softmax predictor with
analytic gradients and Adam (`buot.model`), synthetic task generation and
the two-stage training loop (`buot.datasets`, `buot.training`), a
scikit-learn style classifier (`buot.estimator`), and the experiment CLI
(`buot.cli`).
"""

__version__ = "0.1.0"

from ._validation import NonFiniteError
from .bilevel import (
    BilevelConfig,
    BilevelSolution,
    buot_objective,
    contract,
    contract_fast,
    contract_oracle,
    label_aware_cost,
    label_sign_matrix,
    solve_bilevel,
)
from .config import (
    BuotConfig,
    ConfigParseError,
    ConfigValidationError,
    dumps_config,
    load_config,
    loads_config,
)
from .datasets import SyntheticPdaTask, generate_task
from .estimator import BuotClassifier
from .model import (
    Adam,
    Gradients,
    SoftmaxModel,
    grad_total,
    loss_buot,
    loss_ce,
    loss_entropy,
    loss_rce,
    softmax,
)
from .ot import (
    TransportPlan,
    kl_divergence,
    plan_entropy,
    scaling_uot,
    sinkhorn_balanced,
    uot_objective,
)
from .recovery import (
    ClassWeights,
    bilevel_weights,
    class_weight_matrix,
    indicator_from_labels,
    pseudo_labels,
    recover_class_plan,
    recover_sample_plan,
    sample_weight_matrix,
)
from .training import (
    EvalMetrics,
    IterationRecord,
    TrainReport,
    evaluate,
    fit_buot,
    source_only_config,
    sweep_target_classes,
    train,
)

__all__ = [
    "__version__",
    "NonFiniteError",
    "BilevelConfig",
    "BilevelSolution",
    "buot_objective",
    "contract",
    "contract_fast",
    "contract_oracle",
    "label_aware_cost",
    "label_sign_matrix",
    "solve_bilevel",
    "BuotConfig",
    "ConfigParseError",
    "ConfigValidationError",
    "dumps_config",
    "load_config",
    "loads_config",
    "SyntheticPdaTask",
    "generate_task",
    "BuotClassifier",
    "Adam",
    "Gradients",
    "SoftmaxModel",
    "grad_total",
    "loss_buot",
    "loss_ce",
    "loss_entropy",
    "loss_rce",
    "softmax",
    "TransportPlan",
    "kl_divergence",
    "plan_entropy",
    "scaling_uot",
    "sinkhorn_balanced",
    "uot_objective",
    "ClassWeights",
    "bilevel_weights",
    "class_weight_matrix",
    "indicator_from_labels",
    "pseudo_labels",
    "recover_class_plan",
    "recover_sample_plan",
    "sample_weight_matrix",
    "EvalMetrics",
    "IterationRecord",
    "TrainReport",
    "evaluate",
    "fit_buot",
    "source_only_config",
    "sweep_target_classes",
    "train",
]
