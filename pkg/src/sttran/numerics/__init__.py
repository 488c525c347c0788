"""Minimal tensor algebra with reverse-mode differentiation."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .functional import (
    BatchNormStats,
    batch_norm,
    conv2d,
    cross_entropy,
    dropout,
    layer_norm,
    linear,
    log_softmax,
    relu,
    sigmoid,
    softmax,
)
from .gradcheck import GradCheckReport, corrupted_backward, grad_check
from .optim import AdamW, OptimizerState, clip_global_norm
from .params import Parameter, ParameterSet
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    concat,
    exp,
    get_dtype,
    log,
    matmul,
    precision,
    reshape,
    set_precision,
    take,
    transpose,
)


def backward(loss: Tensor) -> None:
    loss.backward()
