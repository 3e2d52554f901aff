from .tensor import (
    DimensionError,
    NumericalError,
    Tensor,
    concat,
    elu,
    erf,
    log1mexp,
    logsigmoid,
    matmul,
    narrow,
    repeat_rows,
    reshape,
    run_backward,
    select,
    sigmoid,
    softplus,
    sqrt,
    take_rows,
    tanh,
    texp,
    tile_rows,
    tlog,
    tmean,
    transpose,
    tsum,
)
from .nn import Mlp, build_mlp, forward, mlp_widths, xavier_uniform
from .params import Gradient, ParamStore, adam_step, backward, store_from_dict, store_to_dict

__all__ = [
    "DimensionError",
    "NumericalError",
    "Tensor",
    "concat",
    "elu",
    "erf",
    "log1mexp",
    "logsigmoid",
    "matmul",
    "narrow",
    "repeat_rows",
    "reshape",
    "run_backward",
    "select",
    "sigmoid",
    "softplus",
    "sqrt",
    "take_rows",
    "tanh",
    "texp",
    "tile_rows",
    "tlog",
    "tmean",
    "transpose",
    "tsum",
    "Mlp",
    "build_mlp",
    "forward",
    "mlp_widths",
    "xavier_uniform",
    "Gradient",
    "ParamStore",
    "adam_step",
    "backward",
    "store_from_dict",
    "store_to_dict",
]
