"""From-scratch networks: dense, LSTM and convolutional classifiers."""

from .adam import AdamState, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .model import ParamSet, forward, init_params, loss_and_grad, predict_classes
from .spec import ConvLayer, ModelSpec, SpecError, n_params, param_layout

__all__ = [
    "AdamState", "adam_step", "CheckpointError", "load_checkpoint", "save_checkpoint",
    "GradCheckReport", "grad_check", "ParamSet", "forward", "init_params",
    "loss_and_grad", "predict_classes", "ConvLayer", "ModelSpec", "SpecError",
    "n_params", "param_layout",
]
