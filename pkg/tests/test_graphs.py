import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmgc.errors import ContractViolation
from mmgc.graphs import (
    DenseAdjacency,
    SparseAdjacency,
    dirichlet_energy,
    laplacian,
    mean_aggregation_operator,
    normalize_adjacency,
)


def random_sparse(rng, n, density=0.3, weighted=True) -> SparseAdjacency:
    upper = np.triu(rng.random((n, n)) < density, k=1)
    weights = rng.uniform(0.1, 2.0, size=(n, n)) if weighted else np.ones((n, n))
    dense = np.where(upper, weights, 0.0)
    dense = dense + dense.T
    return SparseAdjacency.from_dense(dense)


def pair_sum_energy(field, dense):
    """Independent oracle: unordered-pair sum of w_ij * ||g_i - g_j||^2."""
    n = dense.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if dense[i, j] != 0.0:
                diff = field[i] - field[j]
                total += dense[i, j] * float(diff @ diff)
    return total


class TestNormalize:
    def test_single_node_no_edges(self):
        adj = SparseAdjacency(1, np.array([0, 0]), np.array([], dtype=np.int64),
                              np.array([]))
        out = normalize_adjacency(adj)
        np.testing.assert_array_equal(out.to_dense(), [[1.0]])

    def test_two_nodes_unit_edge(self):
        # degrees of A+I are (2, 2), so every entry becomes 1/2
        adj = SparseAdjacency.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
        out = normalize_adjacency(adj)
        np.testing.assert_allclose(out.to_dense(), np.full((2, 2), 0.5), atol=1e-15)

    def test_dense_matches_sparse(self):
        rng = np.random.default_rng(0)
        sparse = random_sparse(rng, 8)
        dense_out = normalize_adjacency(DenseAdjacency(sparse.to_dense() / 2.0))
        sparse_out = normalize_adjacency(
            SparseAdjacency.from_dense(sparse.to_dense() / 2.0))
        np.testing.assert_allclose(sparse_out.to_dense(), dense_out.matrix, atol=1e-12)

    def test_output_symmetric(self):
        rng = np.random.default_rng(1)
        for seed in range(10):
            out = normalize_adjacency(random_sparse(np.random.default_rng(seed), 9))
            dense = out.to_dense()
            assert np.max(np.abs(dense - dense.T)) <= 1e-12

    def test_spectral_radius_at_most_one(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 17))
            out = normalize_adjacency(random_sparse(rng, n))
            eigs = np.linalg.eigvalsh(out.to_dense())
            assert np.max(np.abs(eigs)) <= 1.0 + 1e-9

    def test_existing_self_loop_is_merged(self):
        dense = np.array([[0.5, 1.0], [1.0, 0.0]])
        out = normalize_adjacency(SparseAdjacency.from_dense(dense))
        assert out.nnz == 4  # one diagonal entry per node, no duplicates
        aug = dense + np.eye(2)
        scale = 1.0 / np.sqrt(aug.sum(axis=1))
        np.testing.assert_allclose(out.to_dense(),
                                   scale[:, None] * aug * scale[None, :], atol=1e-15)


class TestLaplacian:
    def test_path_graph(self):
        adj = SparseAdjacency.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_array_equal(laplacian(adj), [[1.0, -1.0], [-1.0, 1.0]])

    def test_edgeless(self):
        adj = SparseAdjacency(3, np.zeros(4, dtype=np.int64),
                              np.array([], dtype=np.int64), np.array([]))
        np.testing.assert_array_equal(laplacian(adj), np.zeros((3, 3)))

    def test_positive_semidefinite(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            lap = laplacian(random_sparse(rng, int(rng.integers(2, 12))))
            assert np.linalg.eigvalsh(lap).min() >= -1e-10

    def test_rows_sum_to_zero_and_self_loops_ignored(self):
        dense = np.array([[0.7, 0.3], [0.3, 0.2]])
        lap = laplacian(DenseAdjacency(dense))
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-15)
        np.testing.assert_allclose(lap, [[0.3, -0.3], [-0.3, 0.3]], atol=1e-15)


class TestDirichletEnergy:
    def test_constant_field_is_zero(self):
        rng = np.random.default_rng(2)
        adj = random_sparse(rng, 6)
        field = np.tile(rng.normal(size=4), (6, 1))
        assert dirichlet_energy(field, adj) == pytest.approx(0.0, abs=1e-12)

    def test_two_node_hand_value(self):
        adj = SparseAdjacency.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
        field = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert dirichlet_energy(field, adj) == pytest.approx(1.0, abs=1e-12)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(3)
        adj = random_sparse(rng, 7)
        field = rng.normal(size=(7, 3))
        base = dirichlet_energy(field, adj)
        assert dirichlet_energy(2.5 * field, adj) == pytest.approx(2.5 ** 2 * base,
                                                                   rel=1e-12)

    def test_trace_equals_pair_sum_on_100_random_graphs(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 33))
            adj = random_sparse(rng, n)
            field = rng.normal(size=(n, int(rng.integers(1, 6))))
            expected = pair_sum_energy(field, adj.to_dense())
            got = dirichlet_energy(field, adj)
            assert got == pytest.approx(expected, abs=1e-9, rel=1e-9)
            got_dense = dirichlet_energy(field, DenseAdjacency(adj.to_dense() / 2.0))
            assert got_dense == pytest.approx(expected / 2.0, abs=1e-9, rel=1e-9)

    def test_nonnegative(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 20))
            adj = random_sparse(rng, n)
            assert dirichlet_energy(rng.normal(size=(n, 5)), adj) >= 0.0

    def test_shape_mismatch_rejected(self):
        adj = SparseAdjacency.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(ContractViolation):
            dirichlet_energy(np.zeros((3, 2)), adj)

    def test_self_loops_contribute_nothing(self):
        base = np.array([[0.0, 0.6], [0.6, 0.0]])
        looped = base + np.diag([0.9, 0.4])
        field = np.array([[1.0, 2.0], [3.0, -1.0]])
        assert dirichlet_energy(field, DenseAdjacency(looped)) == pytest.approx(
            dirichlet_energy(field, DenseAdjacency(base)), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_energy_nonnegative_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    adj = random_sparse(rng, n)
    field = rng.normal(scale=rng.uniform(0.1, 10.0), size=(n, 3))
    assert dirichlet_energy(field, adj) >= 0.0


class TestSparseAdjacency:
    def test_validate_rejects_asymmetric_structure(self):
        adj = SparseAdjacency(2, np.array([0, 1, 1]), np.array([1]), np.array([1.0]))
        with pytest.raises(ContractViolation):
            adj.validate()

    def test_validate_rejects_asymmetric_weights(self):
        adj = SparseAdjacency.from_coo(2, [0, 1], [1, 0], [1.0, 1.0 + 1e-9])
        with pytest.raises(ContractViolation):
            adj.validate()

    def test_validate_rejects_negative_weights(self):
        adj = SparseAdjacency.from_coo(2, [0, 1], [1, 0], [-1.0, -1.0])
        with pytest.raises(ContractViolation):
            adj.validate()

    def test_roundtrip_dense(self):
        rng = np.random.default_rng(5)
        sparse = random_sparse(rng, 10)
        sparse.validate()
        again = SparseAdjacency.from_dense(sparse.to_dense())
        np.testing.assert_array_equal(again.indptr, sparse.indptr)
        np.testing.assert_array_equal(again.indices, sparse.indices)
        np.testing.assert_array_equal(again.weights, sparse.weights)

    def test_operator_matches_dense(self):
        rng = np.random.default_rng(6)
        sparse = random_sparse(rng, 8)
        h = rng.normal(size=(8, 3))
        np.testing.assert_allclose(sparse.operator().matvec(h),
                                   sparse.to_dense() @ h, atol=1e-13)


class TestMeanAggregation:
    def test_row_stochastic_with_zero_isolated_rows(self):
        dense = np.zeros((4, 4))
        dense[0, 1] = dense[1, 0] = 2.0
        dense[1, 2] = dense[2, 1] = 1.0
        op = mean_aggregation_operator(SparseAdjacency.from_dense(dense))
        m = op.to_dense()
        np.testing.assert_allclose(m.sum(axis=1), [1.0, 1.0, 1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(m[1], [2.0 / 3.0, 0.0, 1.0 / 3.0, 0.0], atol=1e-15)

    def test_self_loops_excluded(self):
        dense = np.array([[1.0, 0.5], [0.5, 1.0]])
        m = mean_aggregation_operator(DenseAdjacency(dense)).to_dense()
        np.testing.assert_allclose(m, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
