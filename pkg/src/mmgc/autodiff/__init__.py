"""Dense reverse-mode autodiff with second-order support."""

from .expr import (
    Expr,
    finite_difference_check,
    finite_difference_gradient,
    gradient,
    second_order_gradient,
)
from .tensor import (
    CsrMatrix,
    Tensor,
    add,
    add_bias,
    add_scalar,
    block_sum_rows,
    broadcast_col,
    broadcast_row,
    constant,
    define_op,
    div,
    embed_cols,
    exp,
    expand,
    fold_sum_rows,
    gather_rows,
    grad,
    hconcat,
    log,
    matmul,
    modality_mix,
    mul,
    mul_scalar,
    neg,
    put_per_row,
    relu,
    repeat_rows,
    reshape,
    scatter_rows,
    sigmoid,
    slice_cols,
    spmm,
    sqrt,
    sub,
    sum_all,
    sum_axis0,
    sum_axis1,
    take_per_row,
    tanh,
    tile_rows,
    transpose,
)

__all__ = [
    "CsrMatrix",
    "Expr",
    "Tensor",
    "add",
    "add_bias",
    "add_scalar",
    "block_sum_rows",
    "broadcast_col",
    "broadcast_row",
    "constant",
    "define_op",
    "div",
    "embed_cols",
    "exp",
    "expand",
    "finite_difference_check",
    "finite_difference_gradient",
    "fold_sum_rows",
    "gather_rows",
    "grad",
    "gradient",
    "hconcat",
    "log",
    "matmul",
    "modality_mix",
    "mul",
    "mul_scalar",
    "neg",
    "put_per_row",
    "relu",
    "repeat_rows",
    "reshape",
    "scatter_rows",
    "second_order_gradient",
    "sigmoid",
    "slice_cols",
    "spmm",
    "sqrt",
    "sub",
    "sum_all",
    "sum_axis0",
    "sum_axis1",
    "take_per_row",
    "tanh",
    "tile_rows",
    "transpose",
]
