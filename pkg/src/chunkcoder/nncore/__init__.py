"""Minimal dense-tensor math with reverse-mode differentiation."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .kernels import ACTIVE_BACKEND
from .layers import (
    Dense,
    Dropout,
    Embedding,
    LayerNorm,
    Module,
    ModuleList,
    MultiHeadAttention,
    Parameter,
    PReLU,
    TransformerLayer,
)
from .optim import AdamState, adam_step, lr_schedule
from .tensor import (
    ShapeError,
    Tensor,
    bce_with_logits,
    concat,
    dropout,
    embedding,
    layer_norm,
    masked_softmax,
    matmul,
    no_grad,
    prelu,
    sigmoid_array,
)

__all__ = [
    "ACTIVE_BACKEND",
    "AdamState",
    "CheckpointError",
    "Dense",
    "Dropout",
    "Embedding",
    "LayerNorm",
    "Module",
    "ModuleList",
    "MultiHeadAttention",
    "Parameter",
    "PReLU",
    "ShapeError",
    "Tensor",
    "TransformerLayer",
    "adam_step",
    "bce_with_logits",
    "concat",
    "dropout",
    "embedding",
    "grad_check",
    "layer_norm",
    "load_checkpoint",
    "lr_schedule",
    "masked_softmax",
    "matmul",
    "no_grad",
    "prelu",
    "save_checkpoint",
    "sigmoid_array",
]
