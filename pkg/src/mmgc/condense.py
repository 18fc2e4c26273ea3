"""Structurally-regularized gradient matching: the condensation engine.

One inner step, at fixed backbone parameters theta_t:
  1. per-class parameter gradients on the real train subgraph (constants),
  2. synthetic adjacency from the edge generator, synthetic loss, per-class
     synthetic parameter gradients (kept differentiable),
  3. per-node feature gradients, decoupled per mode,
  4. matching loss + lambda * Dirichlet energy of the decoupled field,
  5. gradient-descent update of synthetic features and generator parameters
     through the full second-order path,
  6. plain descent step on theta using the undecoupled parameter gradient.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor, grad
from .data import MultimodalGraph, load_dataset, save_dataset
from .decoupling import GradientField, conflict_mask, decouple
from .diagnostics import ConflictStats, snapshot
from .errors import (
    ContractViolation,
    DivergenceError,
    InvalidConfigError,
)
from .graphs import DenseAdjacency, SparseAdjacency, dirichlet_energy, normalize_adjacency
from .models import gcn_forward, init_params, InitDistribution, masked_cross_entropy

MODES = ("srgm", "no-decouple", "no-decouple-no-damp", "damp-detached")

_GENERATOR_META = "generator.json"
_GENERATOR_BIN = "generator.f64"


@dataclass
class EdgeGenMLP:
    """Shared pairwise edge-scoring MLP (tanh hidden layer, scalar output)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    def flatten(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "EdgeGenMLP":
        return EdgeGenMLP(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    @classmethod
    def init(cls, feature_dim: int, hidden: int, rng: np.random.Generator) -> "EdgeGenMLP":
        d_in = 2 * feature_dim
        lim1 = math.sqrt(6.0 / (d_in + hidden))
        lim2 = math.sqrt(6.0 / (hidden + 1))
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(d_in, hidden)),
            b1=np.zeros(hidden),
            w2=rng.uniform(-lim2, lim2, size=(hidden, 1)),
            b2=np.zeros(1),
        )


@dataclass
class SyntheticGraph:
    """Learnable condensed graph: features, fixed labels, generator, adjacency."""

    features: np.ndarray
    labels: np.ndarray
    d_text: int
    num_classes: int
    phi: EdgeGenMLP | None
    adjacency: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def d_image(self) -> int:
        return self.feature_dim - self.d_text

    def class_blocks(self) -> list:
        return [np.flatnonzero(self.labels == c) for c in range(self.num_classes)]


@dataclass(frozen=True)
class CondenseConfig:
    lam: float = 500.0
    ratio: float = 0.01
    lr_feat: float = 1e-2
    lr_phi: float = 1e-3
    lr_theta: float = 1e-2
    outer: int = 20
    inner: int = 10
    mode: str = "srgm"
    seed: int = 0
    threshold: float = 0.5
    hidden: int = 256
    phi_hidden: int = 128
    optimizer: str = "gd"
    clip_meta: float = 0.0
    batch_size: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown mode '{self.mode}'")
        if self.lam < 0:
            raise InvalidConfigError("lambda must be nonnegative")
        if not 0.0 < self.ratio < 1.0:
            raise InvalidConfigError("condensation ratio must lie in (0, 1)")
        if min(self.lr_feat, self.lr_phi, self.lr_theta) <= 0:
            raise InvalidConfigError("learning rates must be positive")
        if self.outer < 1 or self.inner < 0:
            raise InvalidConfigError("need outer >= 1 and inner >= 0")
        if not 0.0 <= self.threshold < 1.0:
            raise InvalidConfigError("edge threshold must lie in [0, 1)")
        if self.hidden < 1 or self.phi_hidden < 1:
            raise InvalidConfigError("widths must be positive")
        if self.optimizer not in ("gd", "adam"):
            raise InvalidConfigError(f"unknown optimizer '{self.optimizer}'")
        if self.clip_meta < 0:
            raise InvalidConfigError("clip_meta must be nonnegative (0 disables)")
        if self.batch_size < 0:
            raise InvalidConfigError("batch_size must be nonnegative (0 = full batch)")


class _AdamState:
    """Adam moments for the synthetic-data meta-updates (theta stays vanilla)."""

    def __init__(self, arrays, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, arrays, grads, lrs):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        out = []
        for i, (a, g, lr) in enumerate(zip(arrays, grads, lrs)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            out.append(a - lr * correction * self.m[i]
                       / (np.sqrt(self.v[i]) + self.eps))
        return out


@dataclass
class StepRecord:
    k: int
    t: int
    loss_gm: float
    r_struct: float | None
    conflict_rate: float | None
    mean_cosine: float | None
    dirichlet_raw: float | None
    dirichlet_decoupled: float | None
    wall_ms: float
    monotonic: float


@dataclass
class EvalRecord:
    k: int
    eval_accuracy: float
    monotonic: float


class MetricsLog:
    """Append-only per-step measurements with monotone timestamps."""

    def __init__(self):
        self.records = []

    def append_step(self, record: StepRecord):
        self._check_monotone(record.monotonic)
        self.records.append(record)

    def append_eval(self, k: int, accuracy: float):
        stamp = time.monotonic()
        self._check_monotone(stamp)
        self.records.append(EvalRecord(k=k, eval_accuracy=accuracy, monotonic=stamp))

    def _check_monotone(self, stamp: float):
        if self.records and stamp < self.records[-1].monotonic:
            raise ContractViolation("metrics timestamps must be monotone")

    def step_records(self) -> list:
        return [r for r in self.records if isinstance(r, StepRecord)]

    def to_jsonl(self, include_wall: bool = False) -> str:
        lines = []
        for r in self.records:
            if isinstance(r, StepRecord):
                row = {
                    "k": r.k, "t": r.t, "loss_gm": r.loss_gm,
                    "r_struct": r.r_struct, "conflict_rate": r.conflict_rate,
                    "mean_cosine": r.mean_cosine, "dirichlet_raw": r.dirichlet_raw,
                    "dirichlet_decoupled": r.dirichlet_decoupled,
                    "wall_ms": r.wall_ms if include_wall else 0.0,
                }
            else:
                row = {"k": r.k, "eval_accuracy": r.eval_accuracy}
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def content_hash(self, include_wall: bool = False) -> str:
        return hashlib.sha256(self.to_jsonl(include_wall).encode()).hexdigest()


# ---------------------------------------------------------------------------
# synthetic graph construction
# ---------------------------------------------------------------------------


def proportional_counts(class_sizes: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation with at least one slot per class."""
    class_sizes = np.asarray(class_sizes, dtype=np.float64)
    if total < class_sizes.size:
        raise InvalidConfigError("fewer synthetic nodes than classes")
    target = total * class_sizes / class_sizes.sum()
    counts = np.floor(target).astype(np.int64)
    remainder = target - counts
    short = total - int(counts.sum())
    for idx in np.argsort(-remainder, kind="stable")[:short]:
        counts[idx] += 1
    while counts.min() == 0:
        counts[int(np.argmax(counts))] -= 1
        counts[int(np.argmin(counts))] += 1
    return counts


def init_synthetic(graph: MultimodalGraph, ratio: float, seed: int,
                   phi_hidden: int = 128) -> SyntheticGraph:
    """Seeded initialization: class-proportional labels, features sampled from
    matching-class train rows, glorot edge generator."""
    if not 0.0 < ratio < 1.0:
        raise InvalidConfigError("condensation ratio must lie in (0, 1)")
    n_train = graph.train_idx.size
    n_syn = math.ceil(ratio * n_train)
    if n_syn < graph.num_classes:
        raise InvalidConfigError(
            f"ratio {ratio} gives {n_syn} synthetic nodes for "
            f"{graph.num_classes} classes")
    y_train = graph.labels[graph.train_idx]
    class_sizes = np.bincount(y_train, minlength=graph.num_classes)
    if class_sizes.min() == 0:
        raise InvalidConfigError("every class must appear in the train split")
    counts = proportional_counts(class_sizes, n_syn)

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(graph.num_classes, dtype=np.int64), counts)
    rows = []
    for c in range(graph.num_classes):
        pool = graph.train_idx[y_train == c]
        take = int(counts[c])
        chosen = rng.choice(pool, size=take, replace=take > pool.size)
        rows.append(graph.features[chosen])
    features = np.concatenate(rows, axis=0)
    phi = EdgeGenMLP.init(graph.feature_dim, phi_hidden, rng)
    return SyntheticGraph(
        features=features, labels=labels, d_text=graph.d_text,
        num_classes=graph.num_classes, phi=phi,
        adjacency=generate_edges(features, phi).matrix,
    )


def _edge_scores(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Dense generated adjacency: symmetric pairwise MLP scores through a
    sigmoid, diagonal forced to one."""
    n = x.data.shape[0]
    pairs = T.hconcat(T.repeat_rows(x, n), T.tile_rows(x, n))
    hidden = T.tanh(T.add_bias(T.matmul(pairs, w1), b1))
    scores = T.reshape(T.add_bias(T.matmul(hidden, w2), b2), (n, n))
    sym = T.mul_scalar(T.add(scores, T.transpose(scores)), 0.5)
    sig = T.sigmoid(sym)
    eye = np.eye(n)
    return T.add(T.mul(sig, T.constant(1.0 - eye)), T.constant(eye))


def generate_edges(features: np.ndarray, phi: EdgeGenMLP) -> DenseAdjacency:
    features = np.asarray(features, dtype=np.float64)
    if phi.in_dim != 2 * features.shape[1]:
        raise ContractViolation(
            f"generator expects pairs of width {phi.in_dim}, features have "
            f"{features.shape[1]} columns")
    leaves = [T.constant(p) for p in phi.flatten()]
    return DenseAdjacency(_edge_scores(T.constant(features), *leaves).data)


def sparsify_adjacency(dense: np.ndarray, threshold: float) -> np.ndarray:
    """Zero entries below the threshold, keeping the diagonal."""
    out = dense.copy()
    diag = np.diag(out).copy()
    out[out < threshold] = 0.0
    np.fill_diagonal(out, diag)
    return out


# ---------------------------------------------------------------------------
# gradient-matching distance
# ---------------------------------------------------------------------------

_MATCH_EPS = 1e-12


def _as_rows_np(g: np.ndarray) -> np.ndarray:
    if g.ndim == 2:
        return g.T
    return g.reshape(-1, 1)


def _as_rows_t(g: Tensor) -> Tensor:
    if g.data.ndim == 2:
        return T.transpose(g)
    return T.reshape(g, (g.data.size, 1))


def _match_distance_t(gs: list, gt: list) -> Tensor:
    """Sum over parameter tensors and output-dimension rows of
    (1 - cosine similarity); degenerate rows follow the documented convention:
    both sides ~0 contribute 0, exactly one side ~0 contributes 1."""
    if len(gs) != len(gt):
        raise ContractViolation("gradient lists differ in length")
    total = None
    penalty = 0.0
    for g_syn, g_real in zip(gs, gt):
        g_real = np.asarray(g_real, dtype=np.float64)
        if g_syn.data.shape != g_real.shape:
            raise ContractViolation(
                f"gradient shape mismatch {g_syn.data.shape} vs {g_real.shape}")
        rows_s = _as_rows_t(g_syn)
        rows_r = _as_rows_np(g_real)
        ns = np.linalg.norm(rows_s.data, axis=1)
        nr = np.linalg.norm(rows_r, axis=1)
        dead_s = ns < _MATCH_EPS
        dead_r = nr < _MATCH_EPS
        penalty += float(np.sum(dead_s ^ dead_r))
        live = ~(dead_s | dead_r)
        if not live.any():
            continue
        idx = np.flatnonzero(live)
        sel_s = T.gather_rows(rows_s, idx)
        sel_r = rows_r[idx]
        dots = T.sum_axis1(T.mul(sel_s, T.constant(sel_r)))
        norm_s = T.sqrt(T.sum_axis1(T.mul(sel_s, sel_s)))
        denom = T.mul(norm_s, T.constant(nr[idx]))
        term = T.sum_all(T.add_scalar(T.neg(T.div(dots, denom)), 1.0))
        total = term if total is None else T.add(total, term)
    if total is None:
        return T.constant(np.asarray(penalty))
    return T.add_scalar(total, penalty) if penalty else total


def match_distance(gs: list, gt: list) -> float:
    """Numpy-facing wrapper over the differentiable matching distance."""
    return _match_distance_t([T.constant(np.asarray(g, dtype=np.float64)) for g in gs],
                             list(gt)).item()


def structural_damping(gprime: GradientField, adjacency: DenseAdjacency) -> float:
    """Dirichlet energy of the (decoupled) gradient field over the synthetic graph."""
    return dirichlet_energy(gprime.values, adjacency)


# ---------------------------------------------------------------------------
# differentiable graph pieces
# ---------------------------------------------------------------------------


def _normalized_operator(a: Tensor) -> Tensor:
    n = a.data.shape[0]
    aug = T.add(a, T.constant(np.eye(n)))
    deg = T.sum_axis1(aug)
    scale = T.div(T.constant(np.ones(n)), T.sqrt(deg))
    return T.mul(T.mul(T.broadcast_col(scale, n), aug), T.broadcast_row(scale, n))


def _trace_energy(gp: Tensor, a: Tensor) -> Tensor:
    """tr(G'^T L G') with L built from the adjacency minus its diagonal."""
    n = a.data.shape[0]
    d = gp.data.shape[1]
    offdiag = T.mul(a, T.constant(1.0 - np.eye(n)))
    deg = T.sum_axis1(offdiag)
    lap_g = T.sub(T.mul(T.broadcast_col(deg, d), gp), T.matmul(offdiag, gp))
    return T.sum_all(T.mul(gp, lap_g))


def _decouple_t(field_t: Tensor, d_text: int, mask: np.ndarray) -> Tensor:
    """Differentiable orthogonal projection of conflicting modality slices.

    The conflict branch (mask) is frozen per step; the projection
    coefficients stay differentiable so the damping term's meta-gradient is
    the exact derivative of the objective. Masked-out rows keep a zero
    coefficient, and their denominators are replaced by one so no division
    by a vanishing norm occurs.
    """
    on = mask.astype(np.float64)
    off = 1.0 - on
    text = T.slice_cols(field_t, 0, d_text)
    image = T.slice_cols(field_t, d_text, 2 * d_text)
    dots = T.sum_axis1(T.mul(text, image))
    denom_t = T.add(T.mul(T.sum_axis1(T.mul(image, image)), T.constant(on)),
                    T.constant(off))
    denom_i = T.add(T.mul(T.sum_axis1(T.mul(text, text)), T.constant(on)),
                    T.constant(off))
    coeff_t = T.mul(T.div(dots, denom_t), T.constant(on))
    coeff_i = T.mul(T.div(dots, denom_i), T.constant(on))
    text_p = T.sub(text, T.mul(T.broadcast_col(coeff_t, d_text), image))
    image_p = T.sub(image, T.mul(T.broadcast_col(coeff_i, d_text), text))
    return T.hconcat(text_p, image_p)


# ---------------------------------------------------------------------------
# the interleaved loop
# ---------------------------------------------------------------------------


class _RealSide:
    """Train-induced subgraph of the original graph plus per-class indices."""

    def __init__(self, graph: MultimodalGraph, hidden: int):
        tr = graph.train_idx
        member = np.zeros(graph.num_nodes, dtype=bool)
        member[tr] = True
        local = np.full(graph.num_nodes, -1, dtype=np.int64)
        local[tr] = np.arange(tr.size)
        adj = graph.adjacency
        rows = adj.row_arrays()
        keep = member[rows] & member[adj.indices]
        sub = SparseAdjacency.from_coo(
            tr.size, local[rows[keep]], local[adj.indices[keep]], adj.weights[keep])
        self.operator = normalize_adjacency(sub).operator()
        self.features = np.ascontiguousarray(graph.features[tr])
        self.labels = graph.labels[tr]
        self.class_idx = [np.flatnonzero(self.labels == c)
                          for c in range(graph.num_classes)]
        if any(idx.size == 0 for idx in self.class_idx):
            raise InvalidConfigError("every class must appear in the train split")
        self.hidden = hidden
        self.num_classes = graph.num_classes

    def class_gradients(self, theta_flat: list, batch_size: int = 0,
                        rng: np.random.Generator | None = None) -> list:
        """Per-class parameter gradients of the train loss at fixed theta.

        With a positive batch_size, each class contributes a class-stratified
        random sample of that many train nodes (propagation still runs over
        the whole train subgraph); otherwise the full class is used.
        """
        leaves = [Tensor(p, requires_grad=True) for p in theta_flat]
        ws, bs = [leaves[0], leaves[2]], [leaves[1], leaves[3]]
        logits = gcn_forward((ws, bs), self.features, self.operator)
        grads = []
        for idx in self.class_idx:
            if batch_size and batch_size < idx.size:
                idx = np.sort(rng.choice(idx, size=batch_size, replace=False))
            loss = masked_cross_entropy(logits, self.labels, idx)
            grads.append([g.data for g in grad(loss, leaves)])
        return grads


@dataclass
class _StepValues:
    loss_update: Tensor
    loss_gm: float
    x_leaf: Tensor
    phi_leaves: list
    theta_grad: list
    field_raw: np.ndarray | None
    field_decoupled: np.ndarray | None
    adjacency: np.ndarray


def _step_objective(xs: np.ndarray, phi_flat: list, theta_flat: list,
                    labels_syn: np.ndarray, class_blocks: list,
                    real_grads: list, d_text: int, lam: float, mode: str,
                    with_fields: bool = True) -> _StepValues:
    """Build the differentiable update objective for one inner step."""
    x_leaf = Tensor(xs, requires_grad=True)
    phi_leaves = [Tensor(p, requires_grad=True) for p in phi_flat]
    theta_leaves = [Tensor(p, requires_grad=True) for p in theta_flat]
    ws, bs = [theta_leaves[0], theta_leaves[2]], [theta_leaves[1], theta_leaves[3]]

    a_syn = _edge_scores(x_leaf, *phi_leaves)
    a_norm = _normalized_operator(a_syn)
    logits = gcn_forward((ws, bs), x_leaf, a_norm)

    class_losses = [masked_cross_entropy(logits, labels_syn, blk)
                    for blk in class_blocks]
    loss_syn = class_losses[0]
    for extra in class_losses[1:]:
        loss_syn = T.add(loss_syn, extra)

    per_class_grads = [grad(loss, theta_leaves, create_graph=True)
                       for loss in class_losses]
    theta_grad = [np.sum([g[i].data for g in per_class_grads], axis=0)
                  for i in range(len(theta_leaves))]

    loss_gm = None
    for syn_grads, real in zip(per_class_grads, real_grads):
        term = _match_distance_t(syn_grads, real)
        loss_gm = term if loss_gm is None else T.add(loss_gm, term)

    damped = mode != "no-decouple-no-damp" and lam > 0
    field_raw = field_dec = None
    loss_update = loss_gm
    if damped or with_fields:
        field_t = grad(loss_syn, x_leaf, create_graph=damped)
        field_raw = field_t.data
        if mode in ("srgm", "damp-detached"):
            raw = GradientField(field_raw, d_text)
            if mode == "srgm":
                gp_t = _decouple_t(field_t, d_text, conflict_mask(raw))
            else:
                gp_t = T.constant(decouple(raw).values)
            field_dec = gp_t.data
        else:
            gp_t = field_t
            field_dec = field_raw
        if damped:
            loss_update = T.add(loss_gm, T.mul_scalar(_trace_energy(gp_t, a_syn), lam))

    return _StepValues(
        loss_update=loss_update, loss_gm=loss_gm.item(), x_leaf=x_leaf,
        phi_leaves=phi_leaves, theta_grad=theta_grad,
        field_raw=field_raw, field_decoupled=field_dec,
        adjacency=a_syn.data,
    )


def update_loss_value(xs, phi_flat, theta_flat, labels_syn, class_blocks,
                      real_grads, d_text, lam, mode) -> float:
    """Value of the update objective; the finite-difference oracle target."""
    sv = _step_objective(np.asarray(xs, dtype=np.float64),
                         [np.asarray(p, dtype=np.float64) for p in phi_flat],
                         theta_flat, labels_syn, class_blocks, real_grads,
                         d_text, lam, mode, with_fields=False)
    return sv.loss_update.item()


def condense(graph: MultimodalGraph, cfg: CondenseConfig, eval_hook=None,
             diagnostics_enabled: bool = True):
    """Run the full interleaved condensation loop.

    Returns the final synthetic graph (adjacency sparsified at the configured
    threshold) and the metrics log. ``eval_hook(k, synthetic)`` may return an
    accuracy to record after each outer iteration. With
    ``diagnostics_enabled=False`` (pure gradient matching only) the decoupling
    and damping code paths are never entered.
    """
    cfg.validate()
    graph.validate()
    if graph.d_text != graph.d_image:
        raise InvalidConfigError(
            "condensation requires equal-width modality slices")
    if not diagnostics_enabled and not (cfg.mode == "no-decouple-no-damp" or cfg.lam == 0.0):
        raise InvalidConfigError(
            "diagnostics can only be disabled for pure gradient matching")

    synth = init_synthetic(graph, cfg.ratio, cfg.seed, cfg.phi_hidden)
    real = _RealSide(graph, cfg.hidden)
    class_blocks = synth.class_blocks()
    xs = synth.features.copy()
    phi_flat = [p.copy() for p in synth.phi.flatten()]
    theta_seeds = np.random.SeedSequence([cfg.seed, 0x7A3]).generate_state(cfg.outer)
    log = MetricsLog()
    adam = _AdamState([xs] + phi_flat) if cfg.optimizer == "adam" else None
    meta_lrs = [cfg.lr_feat] + [cfg.lr_phi] * len(phi_flat)
    batch_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB4]))

    for k in range(1, cfg.outer + 1):
        theta = init_params("gcn", (graph.feature_dim, cfg.hidden, graph.num_classes),
                            InitDistribution(seed=int(theta_seeds[k - 1])))
        theta_flat = theta.flatten()
        for t in range(cfg.inner):
            tic = time.perf_counter()
            real_grads = real.class_gradients(theta_flat, cfg.batch_size,
                                              batch_rng)
            sv = _step_objective(xs, phi_flat, theta_flat, synth.labels,
                                 class_blocks, real_grads, synth.d_text,
                                 cfg.lam, cfg.mode,
                                 with_fields=diagnostics_enabled)
            if not np.isfinite(sv.loss_update.data):
                raise _diverged(k, t, "update loss", log)
            meta = grad(sv.loss_update, [sv.x_leaf] + sv.phi_leaves)
            if any(not np.all(np.isfinite(m.data)) for m in meta):
                raise _diverged(k, t, "meta-gradient", log)
            meta_values = _clip_each([m.data for m in meta], cfg.clip_meta)

            if adam is None:
                xs = xs - cfg.lr_feat * meta_values[0]
                phi_flat = [p - cfg.lr_phi * m
                            for p, m in zip(phi_flat, meta_values[1:])]
            else:
                xs, *phi_flat = adam.step([xs] + phi_flat, meta_values, meta_lrs)
            theta_flat = [p - cfg.lr_theta * g
                          for p, g in zip(theta_flat, sv.theta_grad)]

            wall_ms = (time.perf_counter() - tic) * 1e3
            stats = _measure(sv, synth.d_text) if diagnostics_enabled else None
            log.append_step(StepRecord(
                k=k, t=t, loss_gm=sv.loss_gm,
                r_struct=stats.dirichlet_decoupled if stats else None,
                conflict_rate=stats.conflict_rate if stats else None,
                mean_cosine=stats.mean_cosine if stats else None,
                dirichlet_raw=stats.dirichlet_raw if stats else None,
                dirichlet_decoupled=stats.dirichlet_decoupled if stats else None,
                wall_ms=wall_ms, monotonic=time.monotonic(),
            ))
        if eval_hook is not None:
            result = eval_hook(k, _current_synthetic(synth, xs, phi_flat, cfg))
            if result is not None:
                log.append_eval(k, float(result))

    final = _current_synthetic(synth, xs, phi_flat, cfg)
    return final, log


def _clip_each(values: list, cap: float) -> list:
    """Rescale each meta-gradient tensor whose L2 norm exceeds cap.

    Per-tensor clipping keeps a spike in one channel (typically the damping
    term's feature-gradient path) from throttling the others."""
    if cap <= 0:
        return values
    out = []
    for v in values:
        norm = math.sqrt(float(np.sum(v * v)))
        out.append(v * (cap / norm) if norm > cap else v)
    return out


def _measure(sv: _StepValues, d_text: int) -> ConflictStats:
    return snapshot(GradientField(sv.field_raw, d_text),
                    GradientField(sv.field_decoupled, d_text),
                    DenseAdjacency(sv.adjacency))


def _diverged(k: int, t: int, quantity: str, log: MetricsLog) -> DivergenceError:
    err = DivergenceError(k, t, quantity)
    err.log = log
    return err


def _current_synthetic(synth: SyntheticGraph, xs: np.ndarray, phi_flat: list,
                       cfg: CondenseConfig) -> SyntheticGraph:
    phi = EdgeGenMLP(*[p.copy() for p in phi_flat])
    dense = generate_edges(xs, phi).matrix
    return SyntheticGraph(
        features=xs.copy(), labels=synth.labels.copy(), d_text=synth.d_text,
        num_classes=synth.num_classes, phi=phi,
        adjacency=sparsify_adjacency(dense, cfg.threshold),
    )


# ---------------------------------------------------------------------------
# condensed-graph persistence (dataset format plus generator files)
# ---------------------------------------------------------------------------


def save_condensed(synth: SyntheticGraph, directory) -> None:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    as_graph = MultimodalGraph(
        features=synth.features, d_text=synth.d_text, d_image=synth.d_image,
        adjacency=SparseAdjacency.from_dense(synth.adjacency),
        labels=synth.labels, num_classes=synth.num_classes,
        train_idx=np.arange(synth.num_nodes, dtype=np.int64),
        val_idx=np.array([], dtype=np.int64),
        test_idx=np.array([], dtype=np.int64),
    )
    save_dataset(as_graph, path)
    if synth.phi is not None:
        hidden = synth.phi.w1.shape[1]
        with open(path / _GENERATOR_META, "w") as fh:
            json.dump({"in_dim": synth.phi.in_dim, "hidden": hidden,
                       "format_version": 1}, fh, sort_keys=True, indent=2)
            fh.write("\n")
        np.concatenate([p.ravel() for p in synth.phi.flatten()]) \
            .astype("<f8").tofile(path / _GENERATOR_BIN)


def load_condensed(directory) -> SyntheticGraph:
    path = Path(directory)
    graph = load_dataset(path)
    phi = None
    meta_file = path / _GENERATOR_META
    if meta_file.is_file():
        meta = json.loads(meta_file.read_text())
        d_in, hidden = int(meta["in_dim"]), int(meta["hidden"])
        flat = np.fromfile(path / _GENERATOR_BIN, dtype="<f8")
        sizes = [d_in * hidden, hidden, hidden, 1]
        if flat.size != sum(sizes):
            raise ContractViolation(
                f"{_GENERATOR_BIN}: expected {sum(sizes)} values, found {flat.size}")
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        phi = EdgeGenMLP(parts[0].reshape(d_in, hidden), parts[1],
                         parts[2].reshape(hidden, 1), parts[3])
    return SyntheticGraph(
        features=graph.features, labels=graph.labels, d_text=graph.d_text,
        num_classes=graph.num_classes, phi=phi,
        adjacency=graph.adjacency.to_dense(),
    )
