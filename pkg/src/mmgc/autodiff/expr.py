"""Recorded differentiable computations over named inputs."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import ContractViolation, UnknownInputError
from .tensor import Tensor, grad


class Expr:
    """A computation over named input arrays producing one tensor.

    The builder function receives one leaf Tensor per named input and must be
    deterministic; replaying with the same inputs reproduces the output
    bit-for-bit. Inputs are copied at construction and never mutated.
    """

    def __init__(self, fn: Callable[..., Tensor], inputs: Mapping[str, np.ndarray]):
        self.fn = fn
        self.inputs = {
            name: np.array(value, dtype=np.float64, copy=True)
            for name, value in inputs.items()
        }

    def input_names(self):
        return tuple(self.inputs)

    def _leaves(self, overrides: Mapping[str, np.ndarray] | None = None):
        leaves = {}
        for name, value in self.inputs.items():
            if overrides and name in overrides:
                value = overrides[name]
            leaves[name] = Tensor(value, requires_grad=True)
        return leaves

    def replay(self, overrides: Mapping[str, np.ndarray] | None = None):
        """Re-run the computation; returns (output tensor, leaf tensors)."""
        leaves = self._leaves(overrides)
        out = self.fn(**leaves)
        if not isinstance(out, Tensor):
            raise ContractViolation("expression function must return a Tensor")
        return out, leaves

    def value(self, overrides: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        out, _ = self.replay(overrides)
        return out.data

    def _leaf(self, leaves, name: str) -> Tensor:
        if name not in leaves:
            raise UnknownInputError(name)
        return leaves[name]


def gradient(expr: Expr, wrt: str) -> Tensor:
    """Derivative of a scalar expression with respect to one named input."""
    out, leaves = expr.replay()
    if out.data.size != 1:
        raise ContractViolation(
            f"gradient requires a scalar output, got shape {out.data.shape}")
    leaf = expr._leaf(leaves, wrt)
    return grad(out, leaf)


def second_order_gradient(expr: Expr, inner_wrt: str,
                          reduce: Callable[[Tensor], Tensor],
                          outer_wrt: str) -> Tensor:
    """d/d(outer input) of reduce(d output / d inner input).

    ``reduce`` maps the inner gradient tensor to a scalar tensor (the
    identity is acceptable when the inner gradient is already scalar).
    """
    out, leaves = expr.replay()
    if out.data.size != 1:
        raise ContractViolation(
            f"second_order_gradient requires a scalar output, got shape {out.data.shape}")
    inner_leaf = expr._leaf(leaves, inner_wrt)
    outer_leaf = expr._leaf(leaves, outer_wrt)
    inner = grad(out, inner_leaf, create_graph=True)
    reduced = reduce(inner)
    if not isinstance(reduced, Tensor) or reduced.data.size != 1:
        raise ContractViolation("reduce must map the inner gradient to a scalar tensor")
    return grad(reduced, outer_leaf)


def finite_difference_gradient(expr: Expr, wrt: str, step: float) -> np.ndarray:
    """Central finite differences of a scalar expression, coordinate by coordinate."""
    if wrt not in expr.inputs:
        raise UnknownInputError(wrt)
    base = expr.inputs[wrt]
    fd = np.zeros_like(base)
    flat = fd.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += step
        hi = float(expr.value({wrt: bumped.reshape(base.shape)}).reshape(()))
        bumped[i] -= 2.0 * step
        lo = float(expr.value({wrt: bumped.reshape(base.shape)}).reshape(()))
        flat[i] = (hi - lo) / (2.0 * step)
    return fd


def finite_difference_check(expr: Expr, wrt: str, step: float,
                            floor: float | None = None) -> float:
    """Max relative error between the analytic gradient and central differences.

    Each coordinate is compared relative to max(|analytic|, |fd|, floor); the
    default floor is 1e-3 * (1 + the largest gradient magnitude), so near-zero
    coordinates are judged against the gradient's overall scale rather than
    blowing up the ratio.
    """
    if step <= 0:
        raise ContractViolation("finite-difference step must be positive")
    analytic = gradient(expr, wrt).data
    fd = finite_difference_gradient(expr, wrt, step)
    if analytic.size == 0:
        return 0.0
    if floor is None:
        scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(fd))))
        floor = 1e-3 * (1.0 + scale)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / denom))
