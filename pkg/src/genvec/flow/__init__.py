from .checkpoint import load_checkpoint, save_checkpoint
from .model import Architecture, FlowModel, backward, forward, forward_static, init_model
from .objectives import cfm_loss_grad, cfm_loss_grad_explicit, regression_loss_grad
from .optim import TrainConfig, adamw_step, lr_at_step
from .train import train

__all__ = [
    "Architecture",
    "FlowModel",
    "TrainConfig",
    "adamw_step",
    "backward",
    "cfm_loss_grad",
    "cfm_loss_grad_explicit",
    "forward",
    "forward_static",
    "init_model",
    "load_checkpoint",
    "lr_at_step",
    "regression_loss_grad",
    "save_checkpoint",
    "train",
]
