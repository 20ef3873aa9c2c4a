"""Minimal dense tensors with tape-based reverse-mode differentiation."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .core import Parameter, Tensor, as_tensor, default_dtype, grad_enabled, no_grad, precision
from .gradcheck import grad_check, relative_error
from .module import LayerNorm, Linear, Module, RMSNorm
from .optim import AdamW, adamw_step, linear_warmup_decay

__all__ = [
    "AdamW", "LayerNorm", "Linear", "Module", "Parameter", "RMSNorm", "Tensor",
    "adamw_step", "as_tensor", "default_dtype", "grad_check", "grad_enabled",
    "linear_warmup_decay", "load_checkpoint", "no_grad", "ops", "precision",
    "relative_error", "save_checkpoint",
]
