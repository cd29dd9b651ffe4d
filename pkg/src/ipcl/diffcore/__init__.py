"""Float64 reverse-mode autodiff: tensors, ops, optimizers, checkpoints."""

from .checkpoint import load_checkpoint, load_state, save_checkpoint, state_of
from .gradcheck import grad_check
from .optim import SGD, Adam
from .ops import (
    add,
    add_channel_bias,
    affine,
    conv2d,
    conv3d,
    conv_transpose2d,
    conv_transpose3d,
    cosine_similarity,
    info_nce,
    l2_normalize,
    mean_pool,
    mse_loss,
    relu,
    reshape,
    roi_crop,
    roi_crop_batch,
    scale,
    sigmoid,
    softmax_cross_entropy,
)
from .tensor import Parameter, Tensor, as_tensor, no_grad

__all__ = [
    "Adam",
    "Parameter",
    "SGD",
    "Tensor",
    "add",
    "add_channel_bias",
    "affine",
    "as_tensor",
    "conv2d",
    "conv3d",
    "conv_transpose2d",
    "conv_transpose3d",
    "cosine_similarity",
    "grad_check",
    "info_nce",
    "l2_normalize",
    "load_checkpoint",
    "load_state",
    "mean_pool",
    "mse_loss",
    "no_grad",
    "relu",
    "reshape",
    "roi_crop",
    "roi_crop_batch",
    "save_checkpoint",
    "scale",
    "sigmoid",
    "softmax_cross_entropy",
    "state_of",
]
