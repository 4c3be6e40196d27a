"""Minimal f64 tensor core with reverse-mode autodiff, AdamW and a plateau scheduler."""

from .ops import (
    BN_EPS,
    BN_MOMENTUM,
    ParamInit,
    RunningStats,
    add,
    batch_norm_points,
    concat_features,
    gather_rows,
    leaky_relu,
    linear,
    matmul,
    mul,
    neighbor_max_pool,
    softmax_over_points,
    squared_error_sum,
    sub,
    total,
    transpose,
)
from .optim import AdamW, AdamWState, PlateauScheduler, PlateauSchedulerState
from .tensor import (
    ContractError,
    DimensionError,
    Node,
    NumericError,
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    debug_enabled,
    make_output,
    set_debug,
    tensor,
)

__all__ = [name for name in dir() if not name.startswith("_")]
