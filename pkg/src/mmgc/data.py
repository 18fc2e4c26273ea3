"""On-disk dataset format and the synthetic multimodal-graph generator.

Directory layout (format_version 1), all binaries little-endian, row-major:

    meta.json        num_nodes, d_text, d_image, num_classes, split_sizes,
                     format_version
    features.f64     N x (d_text + d_image) float64
    labels.u32       N uint32
    indptr.u64       CSR row offsets, N+1 uint64
    indices.u64      CSR column indices, sorted per row, uint64
    edgeweights.f64  CSR weights, float64
    train.u64 / val.u64 / test.u64   split index lists

Condensed graphs add generator.json + generator.f64 (edge-generator MLP).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, InvalidConfigError
from .graphs import SparseAdjacency

FORMAT_VERSION = 1

_META = "meta.json"
_FEATURES = "features.f64"
_LABELS = "labels.u32"
_INDPTR = "indptr.u64"
_INDICES = "indices.u64"
_WEIGHTS = "edgeweights.f64"
_SPLITS = ("train.u64", "val.u64", "test.u64")


@dataclass
class MultimodalGraph:
    """Node-classification graph whose features concatenate two modalities."""

    features: np.ndarray
    d_text: int
    d_image: int
    adjacency: SparseAdjacency
    labels: np.ndarray
    num_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    conflict_flags: np.ndarray | None = None

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def validate(self):
        n, d = self.features.shape
        if self.d_text <= 0 or self.d_image <= 0 or self.d_text + self.d_image != d:
            raise InvalidConfigError("modality split must be positive and sum to d")
        if self.labels.shape != (n,):
            raise InvalidConfigError("one label per node required")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise InvalidConfigError("label outside 0..C-1")
        if self.adjacency.num_nodes != n:
            raise InvalidConfigError("adjacency size does not match features")
        splits = [self.train_idx, self.val_idx, self.test_idx]
        joined = np.concatenate(splits) if any(s.size for s in splits) else np.array([], dtype=np.int64)
        if joined.size:
            if joined.min() < 0 or joined.max() >= n:
                raise InvalidConfigError("split index out of range")
            if np.unique(joined).size != joined.size:
                raise InvalidConfigError("split index sets are not disjoint")
        self.adjacency.validate()


@dataclass(frozen=True)
class SynthGenParams:
    """Controls for the synthetic multimodal SBM generator."""

    num_nodes: int = 2000
    num_classes: int = 4
    d_text: int = 32
    d_image: int = 32
    intra_class_edge_prob: float = 0.05
    inter_class_edge_prob: float = 0.005
    conflict_rate: float = 0.6
    feature_noise_std: float = 0.3
    seed: int = 0

    def validate(self):
        if self.num_nodes <= 0 or self.num_classes <= 0:
            raise InvalidConfigError("node and class counts must be positive")
        if self.num_classes > self.num_nodes:
            raise InvalidConfigError("more classes than nodes")
        if self.d_text <= 0 or self.d_image <= 0:
            raise InvalidConfigError("modality dimensions must be positive")
        for p in (self.intra_class_edge_prob, self.inter_class_edge_prob,
                  self.conflict_rate):
            if not 0.0 <= p <= 1.0:
                raise InvalidConfigError("probabilities must lie in [0, 1]")
        if self.feature_noise_std < 0:
            raise InvalidConfigError("noise std must be nonnegative")


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vecs = rng.normal(size=(count, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def stratified_splits(labels: np.ndarray, rng: np.random.Generator,
                      train_frac: float = 0.6, val_frac: float = 0.1):
    """Per-class 60/10/30 split; train fraction within one node of exact."""
    train, val, test = [], [], []
    for c in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_tr = int(round(train_frac * idx.size))
        n_va = min(int(round(val_frac * idx.size)), idx.size - n_tr)
        train.append(idx[:n_tr])
        val.append(idx[n_tr:n_tr + n_va])
        test.append(idx[n_tr + n_va:])
    return (np.sort(np.concatenate(train)), np.sort(np.concatenate(val)),
            np.sort(np.concatenate(test)))


def generate_synthetic(params: SynthGenParams) -> MultimodalGraph:
    """Stochastic-block-model multimodal graph with planted modality conflict.

    Each class gets a unit-norm text center and image center. A node's text
    features follow its own class center; with probability conflict_rate its
    image features are drawn around a uniformly random *other* class's image
    center (a planted conflict, flagged in conflict_flags).
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    n, c = params.num_nodes, params.num_classes

    labels = np.arange(n, dtype=np.int64) % c
    text_centers = _unit_rows(rng, c, params.d_text)
    image_centers = _unit_rows(rng, c, params.d_image)

    conflicted = rng.random(n) < params.conflict_rate
    offsets = rng.integers(1, c, size=n) if c > 1 else np.zeros(n, dtype=np.int64)
    image_class = labels.copy()
    image_class[conflicted] = (labels[conflicted] + offsets[conflicted]) % c
    if c == 1:
        conflicted[:] = False

    text = text_centers[labels] + params.feature_noise_std * rng.normal(size=(n, params.d_text))
    image = image_centers[image_class] + params.feature_noise_std * rng.normal(size=(n, params.d_image))
    features = np.concatenate([text, image], axis=1)

    prob = np.full((c, c), params.inter_class_edge_prob)
    np.fill_diagonal(prob, params.intra_class_edge_prob)
    draws = rng.random((n, n))
    upper = np.triu(draws < prob[labels[:, None], labels[None, :]], k=1)
    dense = (upper | upper.T).astype(np.float64)
    adjacency = SparseAdjacency.from_dense(dense)

    train_idx, val_idx, test_idx = stratified_splits(labels, rng)
    return MultimodalGraph(
        features=features, d_text=params.d_text, d_image=params.d_image,
        adjacency=adjacency, labels=labels, num_classes=c,
        train_idx=train_idx, val_idx=val_idx, test_idx=test_idx,
        conflict_flags=conflicted,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _write_meta(path: Path, graph_meta: dict):
    with open(path / _META, "w") as fh:
        json.dump(graph_meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_array(path: Path, name: str, dtype: str, expected: int | None = None) -> np.ndarray:
    file = path / name
    if not file.is_file():
        raise DatasetFormatError(name, "missing file")
    raw = np.fromfile(file, dtype=np.dtype(dtype))
    if expected is not None and raw.size != expected:
        raise DatasetFormatError(name, f"expected {expected} entries, found {raw.size}")
    return raw


def save_dataset(graph: MultimodalGraph, directory) -> None:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    _write_meta(path, {
        "num_nodes": int(graph.num_nodes),
        "d_text": int(graph.d_text),
        "d_image": int(graph.d_image),
        "num_classes": int(graph.num_classes),
        "split_sizes": [int(graph.train_idx.size), int(graph.val_idx.size),
                        int(graph.test_idx.size)],
        "format_version": FORMAT_VERSION,
    })
    graph.features.astype("<f8").tofile(path / _FEATURES)
    graph.labels.astype("<u4").tofile(path / _LABELS)
    graph.adjacency.indptr.astype("<u8").tofile(path / _INDPTR)
    graph.adjacency.indices.astype("<u8").tofile(path / _INDICES)
    graph.adjacency.weights.astype("<f8").tofile(path / _WEIGHTS)
    for name, idx in zip(_SPLITS, (graph.train_idx, graph.val_idx, graph.test_idx)):
        idx.astype("<u8").tofile(path / name)


def load_dataset(directory) -> MultimodalGraph:
    path = Path(directory)
    meta_file = path / _META
    if not meta_file.is_file():
        raise DatasetFormatError(_META, "missing file")
    try:
        meta = json.loads(meta_file.read_text())
    except json.JSONDecodeError as err:
        raise DatasetFormatError(_META, f"invalid JSON: {err}") from err
    for key in ("num_nodes", "d_text", "d_image", "num_classes", "split_sizes",
                "format_version"):
        if key not in meta:
            raise DatasetFormatError(_META, f"missing key '{key}'")
    if meta["format_version"] != FORMAT_VERSION:
        raise DatasetFormatError(_META, f"unsupported format_version {meta['format_version']}")

    n = int(meta["num_nodes"])
    d = int(meta["d_text"]) + int(meta["d_image"])
    c = int(meta["num_classes"])
    features = _read_array(path, _FEATURES, "<f8", n * d).reshape(n, d)
    labels = _read_array(path, _LABELS, "<u4", n).astype(np.int64)
    if labels.size and labels.max() >= c:
        raise DatasetFormatError(_LABELS, f"label {labels.max()} outside 0..{c - 1}")
    indptr = _read_array(path, _INDPTR, "<u8", n + 1).astype(np.int64)
    nnz = int(indptr[-1]) if indptr.size else 0
    indices = _read_array(path, _INDICES, "<u8", nnz).astype(np.int64)
    weights = _read_array(path, _WEIGHTS, "<f8", nnz)
    adjacency = SparseAdjacency(n, indptr, indices, weights)
    try:
        adjacency.validate()
    except Exception as err:
        raise DatasetFormatError(_INDICES, f"invalid adjacency: {err}") from err

    sizes = meta["split_sizes"]
    splits = []
    for name, size in zip(_SPLITS, sizes):
        splits.append(_read_array(path, name, "<u8", int(size)).astype(np.int64))
    graph = MultimodalGraph(
        features=features, d_text=int(meta["d_text"]), d_image=int(meta["d_image"]),
        adjacency=adjacency, labels=labels, num_classes=c,
        train_idx=splits[0], val_idx=splits[1], test_idx=splits[2],
    )
    try:
        graph.validate()
    except Exception as err:
        raise DatasetFormatError(_META, f"inconsistent dataset: {err}") from err
    return graph
