"""waicflow: flow-ensemble density estimation with WAIC outlier scoring for
multispectral reflectance data, plus a synthetic tissue-spectrum simulator."""

__version__ = "0.1.0"

from .errors import (DegenerateDataError, EvaluationError, OracleError,
                     ParseError, ShapeError, TrainingError,
                     UnsupportedVersionError, UsageError, WaicflowError)
from .flow import (CouplingBlock, FlowModel, coupling_forward, coupling_inverse,
                   flow_forward, flow_inverse, init_flow_model, log_likelihood,
                   nll_loss_and_grad, numerical_logdet_oracle, sample)
from .waic import (Ensemble, TrainConfig, WaicScore, train_ensemble,
                   train_member, waic_batch, waic_score)

__all__ = [
    "CouplingBlock", "DegenerateDataError", "Ensemble", "EvaluationError",
    "FlowModel", "OracleError", "ParseError", "ShapeError", "TrainConfig",
    "TrainingError", "UnsupportedVersionError", "UsageError", "WaicScore",
    "WaicflowError", "coupling_forward", "coupling_inverse", "flow_forward",
    "flow_inverse", "init_flow_model", "log_likelihood", "nll_loss_and_grad",
    "numerical_logdet_oracle", "sample", "train_ensemble", "train_member",
    "waic_batch", "waic_score",
]
