"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive's backward rule is itself built from these primitives, so a
gradient produced with ``create_graph=True`` is a differentiable node and a
second reverse pass yields second-order derivatives.

Broadcasting is deliberately restricted to scalar-with-tensor arithmetic and
row-vector bias addition; every other shape change goes through an explicit
primitive with an explicit adjoint.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractViolation, SecondOrderUnsupportedError
from ..kernels import csr_spmm, modality_mix as _mix_kernel


class Tensor:
    """Immutable dense array node in a computation graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_op", "_so")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"
        self._so = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __array__(self, dtype=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    # arithmetic sugar -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            if self.data.ndim == 2 and other.data.ndim == 1:
                return add_bias(self, other)
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul_scalar(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return div(constant(np.full_like(self.data, float(other))), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 1:
            raise ContractViolation("only positive integer powers are supported")
        out = self
        for _ in range(n - 1):
            out = mul(out, self)
        return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str,
          second_order: bool = True) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
        out._so = second_order
    else:
        out._parents = ()
        out._backward = None
        out._op = op
        out._so = True
    return out


def define_op(data, parents: Sequence[Tensor], backward, name: str,
              second_order: bool = True) -> Tensor:
    """Extension point for custom primitives.

    ``backward(grad)`` must return one gradient (or None) per parent. Pass
    ``second_order=False`` when the backward rule is not itself
    differentiable; differentiating through such a node raises
    SecondOrderUnsupportedError instead of returning a silently wrong value.
    """
    return _node(np.asarray(data, dtype=np.float64), parents, backward, name,
                 second_order=second_order)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Row-vector bias addition: (n, m) + (m,)."""
    if a.data.ndim != 2 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(f"add_bias: {a.data.shape} vs {b.data.shape}")
    return _node(a.data + b.data[None, :], (a, b),
                 lambda g: (g, sum_axis0(g)), "add_bias")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _node(a.data + s, (a,), lambda g: (g,), "add_scalar")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (neg(g),), "neg")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, neg(g)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (mul(g, b), mul(g, a)), "mul")


def mul_scalar(a: Tensor, s: float) -> Tensor:
    return _node(a.data * s, (a,), lambda g: (mul_scalar(g, s),), "mul_scalar")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = _node(a.data / b.data, (a, b), None, "div")
    out._backward = lambda g: (div(g, b), neg(mul(g, div(out, b))))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(f"matmul: {a.data.shape} @ {b.data.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
                 "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ContractViolation("transpose expects a 2-D tensor")
    return _node(np.ascontiguousarray(a.data.T), (a,),
                 lambda g: (transpose(g),), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape
    # note: ascontiguousarray would promote 0-d results to shape (1,)
    return _node(a.data.reshape(shape).copy(), (a,),
                 lambda g: (reshape(g, old),), "reshape")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = constant((a.data > 0).astype(np.float64))
    return _node(np.maximum(a.data, 0.0), (a,),
                 lambda g: (mul(g, mask),), "relu")


def exp(a: Tensor) -> Tensor:
    out = _node(np.exp(a.data), (a,), None, "exp")
    out._backward = lambda g: (mul(g, out),)
    return out


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def sqrt(a: Tensor) -> Tensor:
    out = _node(np.sqrt(a.data), (a,), None, "sqrt")
    out._backward = lambda g: (div(mul_scalar(g, 0.5), out),)
    return out


def tanh(a: Tensor) -> Tensor:
    out = _node(np.tanh(a.data), (a,), None, "tanh")
    out._backward = lambda g: (mul(g, add_scalar(neg(mul(out, out)), 1.0)),)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = _node(val, (a,), None, "sigmoid")
    out._backward = lambda g: (mul(g, mul(out, add_scalar(neg(out), 1.0))),)
    return out


# ---------------------------------------------------------------------------
# reductions and their adjoint broadcasts
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return _node(np.asarray(a.data.sum()), (a,),
                 lambda g: (expand(g, shape),), "sum_all")


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast a one-element tensor to an arbitrary shape."""
    if a.data.size != 1:
        raise ContractViolation("expand expects a one-element tensor")
    shape = tuple(shape)
    return _node(np.full(shape, a.data.reshape(())), (a,),
                 lambda g: (reshape(sum_all(g), a.data.shape),), "expand")


def sum_axis0(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ContractViolation("sum_axis0 expects a 2-D tensor")
    n = a.data.shape[0]
    return _node(a.data.sum(axis=0), (a,),
                 lambda g: (broadcast_row(g, n),), "sum_axis0")


def sum_axis1(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ContractViolation("sum_axis1 expects a 2-D tensor")
    m = a.data.shape[1]
    return _node(a.data.sum(axis=1), (a,),
                 lambda g: (broadcast_col(g, m),), "sum_axis1")


def broadcast_row(v: Tensor, n: int) -> Tensor:
    """(m,) -> (n, m), every row a copy of v."""
    if v.data.ndim != 1:
        raise ContractViolation("broadcast_row expects a 1-D tensor")
    return _node(np.broadcast_to(v.data, (n, v.data.shape[0])).copy(), (v,),
                 lambda g: (sum_axis0(g),), "broadcast_row")


def broadcast_col(v: Tensor, m: int) -> Tensor:
    """(n,) -> (n, m), every column a copy of v."""
    if v.data.ndim != 1:
        raise ContractViolation("broadcast_col expects a 1-D tensor")
    return _node(np.broadcast_to(v.data[:, None], (v.data.shape[0], m)).copy(),
                 (v,), lambda g: (sum_axis1(g),), "broadcast_col")


# ---------------------------------------------------------------------------
# indexing / layout primitives
# ---------------------------------------------------------------------------


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    if a.data.ndim != 2:
        raise ContractViolation("gather_rows expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.int64)
    n = a.data.shape[0]
    return _node(a.data[idx], (a,),
                 lambda g: (scatter_rows(g, idx, n),), "gather_rows")


def scatter_rows(a: Tensor, idx: np.ndarray, n: int) -> Tensor:
    if a.data.ndim != 2:
        raise ContractViolation("scatter_rows expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n, a.data.shape[1]), dtype=np.float64)
    np.add.at(out, idx, a.data)
    return _node(out, (a,), lambda g: (gather_rows(g, idx),), "scatter_rows")


def take_per_row(a: Tensor, cols: np.ndarray) -> Tensor:
    """out[i] = a[i, cols[i]]."""
    if a.data.ndim != 2 or len(cols) != a.data.shape[0]:
        raise ContractViolation("take_per_row: bad shapes")
    cols = np.asarray(cols, dtype=np.int64)
    m = a.data.shape[1]
    return _node(a.data[np.arange(a.data.shape[0]), cols], (a,),
                 lambda g: (put_per_row(g, cols, m),), "take_per_row")


def put_per_row(v: Tensor, cols: np.ndarray, m: int) -> Tensor:
    if v.data.ndim != 1:
        raise ContractViolation("put_per_row expects a 1-D tensor")
    cols = np.asarray(cols, dtype=np.int64)
    out = np.zeros((v.data.shape[0], m), dtype=np.float64)
    out[np.arange(v.data.shape[0]), cols] = v.data
    return _node(out, (v,), lambda g: (take_per_row(g, cols),), "put_per_row")


def hconcat(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ContractViolation(f"hconcat: {a.data.shape} vs {b.data.shape}")
    p = a.data.shape[1]
    q = b.data.shape[1]
    return _node(np.concatenate([a.data, b.data], axis=1), (a, b),
                 lambda g: (slice_cols(g, 0, p), slice_cols(g, p, p + q)),
                 "hconcat")


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= lo < hi <= a.data.shape[1]):
        raise ContractViolation("slice_cols: bad bounds")
    m = a.data.shape[1]
    return _node(np.ascontiguousarray(a.data[:, lo:hi]), (a,),
                 lambda g: (embed_cols(g, lo, m),), "slice_cols")


def embed_cols(a: Tensor, lo: int, m: int) -> Tensor:
    if a.data.ndim != 2 or lo + a.data.shape[1] > m:
        raise ContractViolation("embed_cols: bad bounds")
    hi = lo + a.data.shape[1]
    out = np.zeros((a.data.shape[0], m), dtype=np.float64)
    out[:, lo:hi] = a.data
    return _node(out, (a,), lambda g: (slice_cols(g, lo, hi),), "embed_cols")


def repeat_rows(a: Tensor, k: int) -> Tensor:
    """out[i*k + t] = a[i] for t in 0..k-1."""
    if a.data.ndim != 2:
        raise ContractViolation("repeat_rows expects a 2-D tensor")
    return _node(np.repeat(a.data, k, axis=0), (a,),
                 lambda g: (block_sum_rows(g, k),), "repeat_rows")


def block_sum_rows(a: Tensor, k: int) -> Tensor:
    if a.data.ndim != 2 or a.data.shape[0] % k:
        raise ContractViolation("block_sum_rows: row count not divisible by k")
    n = a.data.shape[0] // k
    return _node(a.data.reshape(n, k, -1).sum(axis=1), (a,),
                 lambda g: (repeat_rows(g, k),), "block_sum_rows")


def tile_rows(a: Tensor, k: int) -> Tensor:
    """out[t*n + i] = a[i] for t in 0..k-1."""
    if a.data.ndim != 2:
        raise ContractViolation("tile_rows expects a 2-D tensor")
    return _node(np.tile(a.data, (k, 1)), (a,),
                 lambda g: (fold_sum_rows(g, k),), "tile_rows")


def fold_sum_rows(a: Tensor, k: int) -> Tensor:
    if a.data.ndim != 2 or a.data.shape[0] % k:
        raise ContractViolation("fold_sum_rows: row count not divisible by k")
    n = a.data.shape[0] // k
    return _node(a.data.reshape(k, n, -1).sum(axis=0), (a,),
                 lambda g: (tile_rows(g, k),), "fold_sum_rows")


# ---------------------------------------------------------------------------
# sparse propagation
# ---------------------------------------------------------------------------


class CsrMatrix:
    """Constant CSR operator usable inside the graph via spmm."""

    __slots__ = ("indptr", "indices", "weights", "shape", "_transpose")

    def __init__(self, indptr, indices, weights, shape, _transpose=None):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.shape = (int(shape[0]), int(shape[1]))
        self._transpose = _transpose

    @property
    def T(self) -> "CsrMatrix":
        if self._transpose is None:
            self._transpose = self._build_transpose()
            self._transpose._transpose = self
        return self._transpose

    def _build_transpose(self) -> "CsrMatrix":
        n_rows, n_cols = self.shape
        counts = np.bincount(self.indices, minlength=n_cols)
        indptr_t = np.zeros(n_cols + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr_t[1:])
        order = np.argsort(self.indices, kind="stable")
        rows = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(self.indptr))
        return CsrMatrix(indptr_t, rows[order], self.weights[order],
                         (n_cols, n_rows))

    def matvec(self, dense: np.ndarray) -> np.ndarray:
        return csr_spmm(self.indptr, self.indices, self.weights,
                        np.ascontiguousarray(dense, dtype=np.float64))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        out[rows, self.indices] = self.weights
        return out


def spmm(op: CsrMatrix, a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.data.shape[0] != op.shape[1]:
        raise ContractViolation(f"spmm: operator {op.shape} vs tensor {a.data.shape}")
    return _node(op.matvec(a.data), (a,),
                 lambda g: (spmm(op.T, g),), "spmm")


# ---------------------------------------------------------------------------
# modality mixing (decoupling with frozen coefficients)
# ---------------------------------------------------------------------------


def modality_mix(a: Tensor, d_text: int, mask: np.ndarray,
                 coeff_text: np.ndarray, coeff_image: np.ndarray) -> Tensor:
    """Rowwise linear mix of equal-width modality slices.

    For masked rows: out_text = text - coeff_text * image and
    out_image = image - coeff_image * text; unmasked rows are copied bitwise.
    The coefficients are constants; the adjoint is the same map with the
    coefficient roles swapped.
    """
    if a.data.ndim != 2 or 2 * d_text != a.data.shape[1]:
        raise ContractViolation("modality_mix expects equal-width modality slices")
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    ct = np.ascontiguousarray(coeff_text, dtype=np.float64)
    ci = np.ascontiguousarray(coeff_image, dtype=np.float64)
    out = _mix_kernel(np.ascontiguousarray(a.data), d_text, mask, ct, ci)
    return _node(out, (a,),
                 lambda g: (modality_mix(g, d_text, mask, ci, ct),),
                 "modality_mix")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _topological_order(output: Tensor) -> list:
    order = []
    seen = set()
    stack = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        nid = id(node)
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrts, create_graph: bool = False) -> list:
    """Gradients of a one-element output with respect to leaf tensors.

    With ``create_graph=True`` the returned tensors stay connected to the
    graph and can themselves be differentiated.
    """
    single = isinstance(wrts, Tensor)
    wrt_list = [wrts] if single else list(wrts)
    if output.data.size != 1:
        raise ContractViolation(
            f"grad expects a one-element output, got shape {output.data.shape}")
    if not output.requires_grad:
        result = [constant(np.zeros_like(w.data)) for w in wrt_list]
        return result[0] if single else result

    wrt_ids = {id(w) for w in wrt_list}
    grads: dict[int, Tensor] = {id(output): constant(np.ones_like(output.data))}
    for node in reversed(_topological_order(output)):
        g = grads.get(id(node))
        if g is None:
            continue
        if id(node) not in wrt_ids:
            del grads[id(node)]
        if node._backward is None:
            continue
        if create_graph and not node._so:
            raise SecondOrderUnsupportedError(
                f"primitive '{node._op}' does not support second-order differentiation")
        contribs = node._backward(g)
        for parent, contrib in zip(node._parents, contribs):
            if contrib is None or not parent.requires_grad:
                continue
            if contrib.data.shape != parent.data.shape:
                raise ContractViolation(
                    f"backward of '{node._op}' produced shape {contrib.data.shape} "
                    f"for parent of shape {parent.data.shape}")
            held = grads.get(id(parent))
            grads[id(parent)] = contrib if held is None else add(held, contrib)
    result = []
    for w in wrt_list:
        g = grads.get(id(w))
        if g is None:
            g = constant(np.zeros_like(w.data))
        elif not create_graph:
            g = g.detach()
        result.append(g)
    return result[0] if single else result
