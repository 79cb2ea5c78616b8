"""Minimal differentiable tensors: ops, attention, backward and gradient checks."""

from .gradcheck import GradCheckError, check_tensors, grad_check, relative_error
from .nn import AttentionConfigError, AttentionParams, multi_head_attention, uniform_fan_in
from .tensor import (
    LN_EPS,
    GraphError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    concat_last_dim,
    div,
    dropout,
    exp,
    expand,
    getitem,
    grad_enabled,
    layer_norm,
    linear,
    log,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_last_dim,
    sub,
    swapaxes,
    tabs,
    transpose,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
