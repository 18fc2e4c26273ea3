import numpy as np
import pytest

from mmgc import kernels
from mmgc.kernels import (
    _csr_dirichlet_loop,
    _csr_dirichlet_numpy,
    _csr_spmm_loop,
    _csr_spmm_numpy,
    _modality_mix_loop,
    _modality_mix_numpy,
)


def random_csr(rng, n, density=0.4):
    dense = np.where(rng.random((n, n)) < density,
                     rng.uniform(0.1, 2.0, size=(n, n)), 0.0)
    dense = np.triu(dense, 1)
    dense = dense + dense.T
    indptr = np.zeros(n + 1, dtype=np.int64)
    cols, vals = [], []
    for i in range(n):
        nz = np.flatnonzero(dense[i])
        indptr[i + 1] = indptr[i] + nz.size
        cols.append(nz)
        vals.append(dense[i, nz])
    return (indptr, np.concatenate(cols).astype(np.int64) if cols else
            np.array([], dtype=np.int64), np.concatenate(vals), dense)


@pytest.mark.parametrize("seed", range(5))
def test_spmm_backends_agree_bitwise(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    indptr, indices, weights, dense = random_csr(rng, n)
    x = rng.normal(size=(n, int(rng.integers(1, 7))))
    loop = _csr_spmm_loop(indptr, indices, weights, x)
    vec = _csr_spmm_numpy(indptr, indices, weights, x)
    assert loop.tobytes() == vec.tobytes()
    np.testing.assert_allclose(loop, dense @ x, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_dirichlet_backends_agree(seed):
    rng = np.random.default_rng(seed + 10)
    n = int(rng.integers(2, 20))
    indptr, indices, weights, dense = random_csr(rng, n)
    field = rng.normal(size=(n, 4))
    loop = _csr_dirichlet_loop(indptr, indices, weights, field)
    vec = _csr_dirichlet_numpy(indptr, indices, weights, field)
    assert loop == pytest.approx(vec, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_modality_mix_backends_agree_bitwise(seed):
    rng = np.random.default_rng(seed + 20)
    n = int(rng.integers(1, 30))
    m = int(rng.integers(1, 6))
    field = rng.normal(size=(n, 2 * m))
    mask = rng.random(n) < 0.5
    c1, c2 = rng.normal(size=n), rng.normal(size=n)
    loop = _modality_mix_loop(field, m, mask, c1, c2)
    vec = _modality_mix_numpy(field, m, mask, c1, c2)
    assert loop.tobytes() == vec.tobytes()


def test_active_backend_matches_reference():
    rng = np.random.default_rng(99)
    indptr, indices, weights, dense = random_csr(rng, 12)
    x = rng.normal(size=(12, 3))
    got = kernels.csr_spmm(indptr, indices, weights, x)
    assert got.tobytes() == _csr_spmm_numpy(indptr, indices, weights, x).tobytes()


def test_empty_graph_kernels():
    indptr = np.zeros(4, dtype=np.int64)
    indices = np.array([], dtype=np.int64)
    weights = np.array([])
    x = np.ones((3, 2))
    assert not _csr_spmm_numpy(indptr, indices, weights, x).any()
    assert _csr_dirichlet_numpy(indptr, indices, weights, x) == 0.0
