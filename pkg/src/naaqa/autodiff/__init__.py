from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradReport, grad_check
from .optim import Adam
from .tensor import ShapeError, Tensor, as_tensor, grad_enabled, no_grad

__all__ = ["Adam", "CheckpointError", "GradReport", "ShapeError", "Tensor", "as_tensor",
           "grad_check", "grad_enabled", "load_checkpoint", "no_grad", "ops", "save_checkpoint"]
