"""Graph primitives: adjacency containers, symmetric normalization,
combinatorial Laplacian, and Dirichlet energy of a node vector field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import CsrMatrix
from .errors import ContractViolation
from .kernels import csr_dirichlet

_SYM_TOL = 1e-12


@dataclass
class SparseAdjacency:
    """Undirected weighted adjacency in CSR form.

    Structurally symmetric: (i, j) is stored iff (j, i) is, with equal weight
    up to 1e-12. Column indices are sorted within each row and weights are
    nonnegative.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def validate(self):
        n = self.num_nodes
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0 \
                or self.indptr[-1] != self.nnz or np.any(np.diff(self.indptr) < 0):
            raise ContractViolation("malformed CSR index pointer")
        if self.nnz:
            if self.indices.min() < 0 or self.indices.max() >= n:
                raise ContractViolation("column index out of range")
            for i in range(n):
                row = self.indices[self.indptr[i]:self.indptr[i + 1]]
                if row.size > 1 and np.any(np.diff(row) <= 0):
                    raise ContractViolation(f"row {i} has unsorted or duplicate columns")
        if np.any(self.weights < 0):
            raise ContractViolation("negative edge weight")
        t = self.transpose_arrays()
        if not np.array_equal(t[0], self.indptr) or not np.array_equal(t[1], self.indices):
            raise ContractViolation("adjacency is not structurally symmetric")
        if self.nnz and np.max(np.abs(t[2] - self.weights)) > _SYM_TOL:
            raise ContractViolation("asymmetric edge weights")

    def transpose_arrays(self):
        n = self.num_nodes
        counts = np.bincount(self.indices, minlength=n)
        indptr_t = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr_t[1:])
        order = np.argsort(self.indices, kind="stable")
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.indptr))
        return indptr_t, rows[order], self.weights[order]

    def row_arrays(self):
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64),
                         np.diff(self.indptr))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float64)
        out[self.row_arrays(), self.indices] = self.weights
        return out

    def operator(self) -> CsrMatrix:
        return CsrMatrix(self.indptr, self.indices, self.weights,
                         (self.num_nodes, self.num_nodes))

    @classmethod
    def from_coo(cls, num_nodes: int, rows, cols, weights) -> "SparseAdjacency":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, weights = rows[order], cols[order], weights[order]
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=indptr[1:])
        return cls(num_nodes, indptr, cols, weights)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseAdjacency":
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], rows, cols, dense[rows, cols])


@dataclass
class DenseAdjacency:
    """Dense symmetric adjacency with weights in [0, 1]."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    def validate(self, unit_diagonal: bool = False):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractViolation("dense adjacency must be square")
        if np.max(np.abs(m - m.T), initial=0.0) > _SYM_TOL:
            raise ContractViolation("dense adjacency is not symmetric")
        if m.size and (m.min() < -_SYM_TOL or m.max() > 1.0 + _SYM_TOL):
            raise ContractViolation("edge weights outside [0, 1]")
        if unit_diagonal and not np.all(np.diag(m) == 1.0):
            raise ContractViolation("diagonal entries must be exactly 1")


def _normalize_dense(matrix: np.ndarray) -> np.ndarray:
    aug = matrix + np.eye(matrix.shape[0])
    scale = 1.0 / np.sqrt(aug.sum(axis=1))
    return (scale[:, None] * aug) * scale[None, :]


def _normalize_sparse(adj: SparseAdjacency) -> SparseAdjacency:
    n = adj.num_nodes
    rows = np.concatenate([adj.row_arrays(), np.arange(n, dtype=np.int64)])
    cols = np.concatenate([adj.indices, np.arange(n, dtype=np.int64)])
    vals = np.concatenate([adj.weights, np.ones(n)])
    # merge duplicate (i, i) entries produced by an existing self-loop
    keys = rows * n + cols
    order = np.argsort(keys, kind="stable")
    keys, rows, cols, vals = keys[order], rows[order], cols[order], vals[order]
    boundary = np.concatenate([[True], keys[1:] != keys[:-1]])
    merged = np.add.reduceat(vals, np.flatnonzero(boundary))
    rows, cols = rows[boundary], cols[boundary]
    deg = np.zeros(n)
    np.add.at(deg, rows, merged)
    scale = 1.0 / np.sqrt(deg)
    return SparseAdjacency.from_coo(n, rows, cols, merged * scale[rows] * scale[cols])


def normalize_adjacency(adj):
    """Symmetric GCN propagation operator: D^{-1/2} (A + I) D^{-1/2}."""
    if isinstance(adj, DenseAdjacency):
        return DenseAdjacency(_normalize_dense(adj.matrix))
    if isinstance(adj, SparseAdjacency):
        return _normalize_sparse(adj)
    raise ContractViolation(f"unsupported adjacency type {type(adj).__name__}")


def laplacian(adj) -> np.ndarray:
    """Combinatorial Laplacian Deg - W with self-loops excluded from W."""
    if isinstance(adj, SparseAdjacency):
        dense = adj.to_dense()
    elif isinstance(adj, DenseAdjacency):
        dense = adj.matrix.copy()
    else:
        raise ContractViolation(f"unsupported adjacency type {type(adj).__name__}")
    np.fill_diagonal(dense, 0.0)
    lap = -dense
    lap[np.diag_indices_from(lap)] = dense.sum(axis=1)
    return lap


def dirichlet_energy(field: np.ndarray, adj) -> float:
    """tr(G^T L G): smoothness of a per-node vector field over the graph.

    Equals the unordered-pair sum of w_ij * ||g_i - g_j||^2; clamped at zero
    against cancellation roundoff on constant fields.
    """
    field = np.ascontiguousarray(field, dtype=np.float64)
    if field.ndim == 1:
        field = field[:, None]
    n = adj.num_nodes if isinstance(adj, (SparseAdjacency, DenseAdjacency)) else None
    if n is None:
        raise ContractViolation(f"unsupported adjacency type {type(adj).__name__}")
    if field.shape[0] != n:
        raise ContractViolation(
            f"field has {field.shape[0]} rows for a {n}-node graph")
    if isinstance(adj, SparseAdjacency):
        energy = float(csr_dirichlet(adj.indptr, adj.indices, adj.weights, field))
    else:
        w = adj.matrix.copy()
        np.fill_diagonal(w, 0.0)
        deg = w.sum(axis=1)
        energy = float(deg @ np.einsum("ij,ij->i", field, field)
                       - np.einsum("ij,ij->", field, w @ field))
    return energy if energy > 0.0 else 0.0


def mean_aggregation_operator(adj) -> CsrMatrix:
    """Row-normalized neighbor averaging with self-loops removed.

    Rows of isolated nodes are zero (neighbor mean imputed as zero).
    """
    if isinstance(adj, DenseAdjacency):
        sparse = SparseAdjacency.from_dense(adj.matrix)
    elif isinstance(adj, SparseAdjacency):
        sparse = adj
    else:
        raise ContractViolation(f"unsupported adjacency type {type(adj).__name__}")
    rows = sparse.row_arrays()
    keep = rows != sparse.indices
    rows, cols, vals = rows[keep], sparse.indices[keep], sparse.weights[keep]
    deg = np.zeros(sparse.num_nodes)
    np.add.at(deg, rows, vals)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    norm = SparseAdjacency.from_coo(sparse.num_nodes, rows, cols, vals * inv[rows])
    return CsrMatrix(norm.indptr, norm.indices, norm.weights,
                     (sparse.num_nodes, sparse.num_nodes))
