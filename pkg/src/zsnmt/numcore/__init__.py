"""Minimal dense-array core with reverse-mode autodiff."""

from ._backend import BACKEND, available_backends, kernels
from .gradcheck import grad_check
from .tensor import (
    DEFAULT_DTYPE,
    DimensionError,
    EvaluationError,
    Tape,
    Tensor,
    add,
    attention,
    attention_arrays,
    concat,
    cross_entropy,
    dropout,
    embedding,
    log_softmax,
    log_softmax_array,
    lstm,
    matmul,
    mul,
    reshape,
    scale,
    sigmoid,
    softmax,
    softmax_array,
    tanh,
    total,
    transpose,
)
