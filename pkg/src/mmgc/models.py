"""Model zoo: 2-layer GCN backbone (second-order differentiable), plus
mean-aggregator SAGE and MLP evaluators, with masked cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import CsrMatrix, Tensor
from .errors import ContractViolation

ARCHITECTURES = ("gcn", "sage", "mlp")


@dataclass(frozen=True)
class InitDistribution:
    scheme: str = "glorot-uniform"
    seed: int = 0


@dataclass
class ModelParams:
    """Per-layer weights and biases for one architecture."""

    arch: str
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    hidden: int = 256

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.hidden)

    def flatten(self) -> list:
        flat = []
        for w, b in zip(self.weights, self.biases):
            flat.extend((w, b))
        return flat


def _layer_shapes(arch: str, in_dim: int, hidden: int, out_dim: int):
    if arch in ("gcn", "mlp"):
        return [(in_dim, hidden), (hidden, out_dim)]
    if arch == "sage":
        return [(2 * in_dim, hidden), (2 * hidden, hidden), (hidden, out_dim)]
    raise ContractViolation(f"unknown architecture '{arch}'")


def init_params(arch: str, dims, dist: InitDistribution) -> ModelParams:
    """Glorot-uniform weights, zero biases, reproducible under the seed."""
    if dist.scheme != "glorot-uniform":
        raise ContractViolation(f"unknown init scheme '{dist.scheme}'")
    in_dim, hidden, out_dim = dims
    rng = np.random.default_rng(dist.seed)
    params = ModelParams(arch, hidden=hidden)
    for fan_in, fan_out in _layer_shapes(arch, in_dim, hidden, out_dim):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.biases.append(np.zeros(fan_out))
    return params


def params_to_tensors(params: ModelParams, requires_grad: bool = True):
    ws = [Tensor(w, requires_grad=requires_grad) for w in params.weights]
    bs = [Tensor(b, requires_grad=requires_grad) for b in params.biases]
    return ws, bs


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else T.constant(np.asarray(x, dtype=np.float64))


def propagate(operator, h: Tensor) -> Tensor:
    """Apply a propagation operator (dense tensor/array or constant CSR)."""
    if isinstance(operator, CsrMatrix):
        return T.spmm(operator, h)
    return T.matmul(_as_tensor(operator), h)


def _unpack(params, expected_arch: str):
    if isinstance(params, ModelParams):
        if params.arch != expected_arch:
            raise ContractViolation(
                f"architecture tag '{params.arch}' passed to {expected_arch} forward")
        return params_to_tensors(params, requires_grad=False)
    weights, biases = params
    return list(weights), list(biases)


def gcn_forward(params, x, a_norm) -> Tensor:
    """logits = Anorm . ReLU(Anorm . X . W1 + b1) . W2 + b2."""
    weights, biases = _unpack(params, "gcn")
    if len(weights) != 2:
        raise ContractViolation("gcn_forward expects two layers")
    x = _as_tensor(x)
    hidden = T.relu(T.add_bias(T.matmul(propagate(a_norm, x), weights[0]), biases[0]))
    return T.add_bias(propagate(a_norm, T.matmul(hidden, weights[1])), biases[1])


def sage_forward(params, x, mean_op) -> Tensor:
    """Two ReLU([h || mean_neighbor(h)] W + b) layers, then a linear head."""
    weights, biases = _unpack(params, "sage")
    if len(weights) != 3:
        raise ContractViolation("sage_forward expects three layers")
    h = _as_tensor(x)
    for layer in range(2):
        joined = T.hconcat(h, propagate(mean_op, h))
        h = T.relu(T.add_bias(T.matmul(joined, weights[layer]), biases[layer]))
    return T.add_bias(T.matmul(h, weights[2]), biases[2])


def mlp_forward(params, x) -> Tensor:
    """Adjacency-free two-layer perceptron."""
    weights, biases = _unpack(params, "mlp")
    if len(weights) != 2:
        raise ContractViolation("mlp_forward expects two layers")
    x = _as_tensor(x)
    hidden = T.relu(T.add_bias(T.matmul(x, weights[0]), biases[0]))
    return T.add_bias(T.matmul(hidden, weights[1]), biases[1])


def forward(params, arch: str, x, operator=None) -> Tensor:
    if arch == "gcn":
        return gcn_forward(params, x, operator)
    if arch == "sage":
        return sage_forward(params, x, operator)
    if arch == "mlp":
        return mlp_forward(params, x)
    raise ContractViolation(f"unknown architecture '{arch}'")


def masked_cross_entropy(logits, labels, index_set) -> Tensor:
    """Mean softmax cross-entropy over the given node index set."""
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise ContractViolation("cross-entropy over an empty index set")
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    picked = T.gather_rows(logits, idx)
    # constant row-max shift: log-sum-exp is exact for any constant shift
    shift = T.constant(np.broadcast_to(
        picked.data.max(axis=1, keepdims=True), picked.data.shape).copy())
    shifted = T.sub(picked, shift)
    lse = T.log(T.sum_axis1(T.exp(shifted)))
    true_logit = T.take_per_row(shifted, labels[idx])
    per_node = T.sub(lse, true_logit)
    return T.mul_scalar(T.sum_all(per_node), 1.0 / idx.size)


def predict(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=1)


def accuracy(logits: np.ndarray, labels: np.ndarray, index_set: np.ndarray) -> float:
    idx = np.asarray(index_set, dtype=np.int64)
    return float(np.mean(predict(logits[idx]) == labels[idx]))
