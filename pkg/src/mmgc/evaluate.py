"""Two-stage evaluation: train a fresh model only on the condensed graph,
then test on the original graph's test split. Includes the Random coreset
baseline."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff.tensor import Tensor, grad
from .condense import SyntheticGraph, proportional_counts
from .data import MultimodalGraph
from .errors import DivergenceError, IncompatibleShapesError, InvalidConfigError
from .graphs import (
    DenseAdjacency,
    SparseAdjacency,
    mean_aggregation_operator,
    normalize_adjacency,
)
from .models import (
    ARCHITECTURES,
    InitDistribution,
    ModelParams,
    accuracy,
    forward,
    init_params,
    masked_cross_entropy,
    params_to_tensors,
)


@dataclass(frozen=True)
class EvalConfig:
    arch: str = "gcn"
    epochs: int = 600
    lr: float = 1e-2
    weight_decay: float = 5e-4
    runs: int = 5
    seed_base: int = 0
    inductive: bool = False
    hidden: int = 256

    def validate(self):
        if self.arch not in ARCHITECTURES:
            raise InvalidConfigError(f"unknown architecture '{self.arch}'")
        if self.runs < 1 or self.epochs < 0:
            raise InvalidConfigError("need runs >= 1 and epochs >= 0")
        if self.lr <= 0 or self.weight_decay < 0:
            raise InvalidConfigError("bad optimizer settings")


@dataclass
class EvalReport:
    arch: str
    per_run: list
    mean: float
    std: float
    condensed_fingerprint: str
    config: dict = field(default_factory=dict)

    @classmethod
    def from_runs(cls, arch: str, per_run: list, fingerprint: str,
                  config: dict | None = None) -> "EvalReport":
        arr = np.asarray(per_run, dtype=np.float64)
        return cls(arch=arch, per_run=[float(a) for a in arr],
                   mean=float(arr.mean()), std=float(arr.std()),
                   condensed_fingerprint=fingerprint, config=config or {})


def condensed_fingerprint(synth: SyntheticGraph) -> str:
    digest = hashlib.sha256()
    digest.update(synth.features.astype("<f8").tobytes())
    digest.update(synth.labels.astype("<i8").tobytes())
    digest.update(synth.adjacency.astype("<f8").tobytes())
    return digest.hexdigest()


def _train_operator(synth: SyntheticGraph, arch: str):
    dense = DenseAdjacency(synth.adjacency)
    if arch == "gcn":
        return normalize_adjacency(dense).matrix
    if arch == "sage":
        return mean_aggregation_operator(dense)
    return None


def train_on_condensed(condensed: SyntheticGraph, cfg: EvalConfig,
                       seed: int | None = None) -> ModelParams:
    """Full-batch gradient descent on the condensed graph alone.

    Cross-entropy over every synthetic node plus L2 weight decay on the
    weight matrices; the returned parameters are the snapshot with the best
    condensed-graph task loss (no access to any original-graph signal).
    """
    cfg.validate()
    if seed is None:
        seed = cfg.seed_base
    params = init_params(cfg.arch, (condensed.feature_dim, cfg.hidden,
                                    condensed.num_classes),
                         InitDistribution(seed=seed))
    if cfg.epochs == 0:
        return params
    operator = _train_operator(condensed, cfg.arch)
    x = condensed.features
    all_nodes = np.arange(condensed.num_nodes)
    ws, bs = params_to_tensors(params, requires_grad=True)
    best_loss = math.inf
    best = params.copy()
    for epoch in range(cfg.epochs):
        logits = forward((ws, bs), cfg.arch, x, operator)
        loss = masked_cross_entropy(logits, condensed.labels, all_nodes)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            raise DivergenceError(0, epoch, "evaluation training loss")
        if loss_val < best_loss:
            best_loss = loss_val
            best = ModelParams(cfg.arch, [w.data.copy() for w in ws],
                               [b.data.copy() for b in bs], cfg.hidden)
        grads = grad(loss, ws + bs)
        n_w = len(ws)
        ws = [Tensor(w.data - cfg.lr * (g.data + cfg.weight_decay * w.data),
                     requires_grad=True)
              for w, g in zip(ws, grads[:n_w])]
        bs = [Tensor(b.data - cfg.lr * g.data, requires_grad=True)
              for b, g in zip(bs, grads[n_w:])]
    return best


def _reachable_from(adj: SparseAdjacency, seeds: np.ndarray) -> np.ndarray:
    member = np.zeros(adj.num_nodes, dtype=bool)
    member[seeds] = True
    frontier = np.asarray(seeds, dtype=np.int64)
    while frontier.size:
        nxt = []
        for i in frontier:
            nbrs = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
            fresh = nbrs[~member[nbrs]]
            if fresh.size:
                member[fresh] = True
                nxt.append(fresh)
        frontier = np.concatenate(nxt) if nxt else np.array([], dtype=np.int64)
    return np.flatnonzero(member)


def _induced_sparse(adj: SparseAdjacency, nodes: np.ndarray) -> SparseAdjacency:
    member = np.zeros(adj.num_nodes, dtype=bool)
    member[nodes] = True
    local = np.full(adj.num_nodes, -1, dtype=np.int64)
    local[nodes] = np.arange(nodes.size)
    rows = adj.row_arrays()
    keep = member[rows] & member[adj.indices]
    return SparseAdjacency.from_coo(nodes.size, local[rows[keep]],
                                    local[adj.indices[keep]], adj.weights[keep])


def evaluate(params: ModelParams, graph: MultimodalGraph,
             inductive: bool = False) -> float:
    """Accuracy on the test split.

    Transductive mode propagates over the full graph; inductive mode builds
    the propagation operator from the subgraph reachable from test nodes.
    """
    expected = params.weights[0].shape[0] if params.arch != "sage" \
        else params.weights[0].shape[0] // 2
    if expected != graph.feature_dim:
        raise IncompatibleShapesError(
            f"model expects {expected} features, graph has {graph.feature_dim}")
    if inductive and params.arch != "mlp":
        nodes = _reachable_from(graph.adjacency, graph.test_idx)
        sub = _induced_sparse(graph.adjacency, nodes)
        local = np.full(graph.num_nodes, -1, dtype=np.int64)
        local[nodes] = np.arange(nodes.size)
        x = graph.features[nodes]
        test_local = local[graph.test_idx]
        operator = normalize_adjacency(sub).operator() if params.arch == "gcn" \
            else mean_aggregation_operator(sub)
        logits = forward(params, params.arch, x, operator).data
        return float(np.mean(np.argmax(logits[test_local], axis=1)
                             == graph.labels[graph.test_idx]))
    if params.arch == "gcn":
        operator = normalize_adjacency(graph.adjacency).operator()
    elif params.arch == "sage":
        operator = mean_aggregation_operator(graph.adjacency)
    else:
        operator = None
    logits = forward(params, params.arch, graph.features, operator).data
    return accuracy(logits, graph.labels, graph.test_idx)


def run_protocol(condensed: SyntheticGraph, graph: MultimodalGraph,
                 cfg: EvalConfig) -> EvalReport:
    """Repeat train-on-condensed / test-on-original over consecutive seeds."""
    cfg.validate()
    per_run = []
    for run in range(cfg.runs):
        params = train_on_condensed(condensed, cfg, seed=cfg.seed_base + run)
        per_run.append(evaluate(params, graph, inductive=cfg.inductive))
    return EvalReport.from_runs(cfg.arch, per_run, condensed_fingerprint(condensed))


def random_coreset(graph: MultimodalGraph, ratio: float, seed: int) -> SyntheticGraph:
    """Class-stratified uniform sample of train nodes with its induced subgraph,
    packaged like a condensed graph (no edge generator)."""
    n_train = graph.train_idx.size
    n_pick = math.ceil(ratio * n_train)
    if n_pick < graph.num_classes:
        raise InvalidConfigError("ratio too small to cover every class")
    y_train = graph.labels[graph.train_idx]
    counts = proportional_counts(np.bincount(y_train, minlength=graph.num_classes),
                                 n_pick)
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(graph.num_classes):
        pool = graph.train_idx[y_train == c]
        take = min(int(counts[c]), pool.size)
        chosen.append(np.sort(rng.choice(pool, size=take, replace=False)))
    nodes = np.concatenate(chosen)
    sub = _induced_sparse(graph.adjacency, nodes)
    return SyntheticGraph(
        features=graph.features[nodes].copy(),
        labels=graph.labels[nodes].copy(),
        d_text=graph.d_text, num_classes=graph.num_classes,
        phi=None, adjacency=sub.to_dense(),
    )
