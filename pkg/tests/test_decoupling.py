import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmgc.decoupling import GradientField, conflict_mask, decouple
from mmgc.diagnostics import conflict_rate, snapshot
from mmgc.errors import ContractViolation
from mmgc.graphs import DenseAdjacency


def field_of(rows, d_text=None):
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return GradientField(rows, d_text or rows.shape[1] // 2)


class TestDecoupleRows:
    def test_aligned_row_unchanged(self):
        f = field_of([[1.0, 0.0, 1.0, 1.0]])
        out = decouple(f)
        assert out.values.tobytes() == f.values.tobytes()

    def test_hand_derived_projection(self):
        # g_text=(1,0), g_image=(-1,1): dot=-1, projections (0.5,0.5) / (0,1)
        f = field_of([[1.0, 0.0, -1.0, 1.0]])
        out = decouple(f)
        np.testing.assert_allclose(out.values, [[0.5, 0.5, 0.0, 1.0]], atol=1e-12)

    def test_antiparallel_slices_annihilate(self):
        rng = np.random.default_rng(0)
        text = rng.normal(size=(5, 3))
        f = GradientField(np.concatenate([text, -text], axis=1), 3)
        out = decouple(f)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-12)

    def test_degenerate_norm_skipped(self):
        f = field_of([[1.0, 0.0, -1e-16, 0.0]])
        out = decouple(f)
        assert out.values.tobytes() == f.values.tobytes()

    def test_unequal_split_rejected(self):
        f = GradientField(np.zeros((2, 5)), 2)
        with pytest.raises(ContractViolation):
            decouple(f)

    def test_projection_properties_bulk(self):
        rng = np.random.default_rng(42)
        n, m = 10_000, 16
        values = rng.normal(size=(n, 2 * m))
        f = GradientField(values, m)
        mask = conflict_mask(f)
        out = decouple(f).values
        text, image = values[:, :m], values[:, m:]
        out_t, out_i = out[:, :m], out[:, m:]
        # (a) post-projection inner products against the original opposing slices
        assert np.min(np.einsum("ij,ij->i", out_t, image)) >= -1e-10
        assert np.min(np.einsum("ij,ij->i", out_i, text)) >= -1e-10
        # (b) non-conflicting rows bitwise unchanged
        for i in np.flatnonzero(~mask)[:200]:
            assert out[i].tobytes() == values[i].tobytes()
        # norm non-increase on the projected slices
        assert np.all(np.linalg.norm(out_t, axis=1)
                      <= np.linalg.norm(text, axis=1) + 1e-12)
        assert np.all(np.linalg.norm(out_i, axis=1)
                      <= np.linalg.norm(image, axis=1) + 1e-12)

    def test_idempotent_after_projection(self):
        rng = np.random.default_rng(11)
        f = GradientField(rng.normal(size=(500, 8)), 4)
        once = decouple(f)
        # the projected field carries no remaining conflicts, so a second
        # application leaves it unchanged
        assert not conflict_mask(once).any()
        twice = decouple(once)
        assert twice.values.tobytes() == once.values.tobytes()


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (6,), elements=st.floats(-5, 5, allow_nan=False)))
def test_single_row_projection_properties(row):
    f = GradientField(row[None, :], 3)
    out = decouple(f).values[0]
    text, image = row[:3], row[3:]
    if np.linalg.norm(text) >= 1e-15 and np.linalg.norm(image) >= 1e-15:
        assert out[:3] @ image >= -1e-10
        assert out[3:] @ text >= -1e-10
    else:
        assert out.tobytes() == row.tobytes()


class TestConflictRate:
    def test_identical_slices_no_conflict(self):
        rng = np.random.default_rng(1)
        half = rng.normal(size=(50, 4))
        f = GradientField(np.concatenate([half, half], axis=1), 4)
        assert conflict_rate(f) == 0.0

    def test_antiparallel_full_conflict(self):
        rng = np.random.default_rng(2)
        half = rng.normal(size=(50, 4))
        f = GradientField(np.concatenate([half, -half], axis=1), 4)
        assert conflict_rate(f) == 1.0

    def test_random_gaussian_is_half(self):
        rng = np.random.default_rng(3)
        f = GradientField(rng.normal(size=(10_000, 64)), 32)
        assert abs(conflict_rate(f) - 0.5) <= 0.02

    def test_degenerate_rows_excluded(self):
        values = np.array([
            [1.0, 0.0, -1.0, 0.0],   # conflict
            [0.0, 0.0, 1.0, 1.0],    # degenerate text slice: excluded
            [1.0, 0.0, 1.0, 0.0],    # aligned
        ])
        assert conflict_rate(GradientField(values, 2)) == pytest.approx(0.5)

    def test_all_degenerate_reports_zero_with_flag(self):
        f = GradientField(np.zeros((4, 6)), 3)
        assert conflict_rate(f) == 0.0
        stats = snapshot(f, f, DenseAdjacency(np.eye(4)))
        assert stats.degenerate
        assert stats.conflict_rate == 0.0


class TestSnapshot:
    def test_no_conflicts_equal_energies(self):
        rng = np.random.default_rng(4)
        half = rng.normal(size=(6, 4))
        f = GradientField(np.concatenate([half, half], axis=1), 4)
        adj = DenseAdjacency(np.minimum(rng.random((6, 6)), 1.0) * 0)
        dec = decouple(f)
        stats = snapshot(f, dec, adj)
        assert stats.dirichlet_raw == stats.dirichlet_decoupled

    def test_constant_field_zero_energy(self):
        values = np.tile([1.0, 2.0, 3.0, 4.0], (3, 1))
        f = GradientField(values, 2)
        dense = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.9], [0.2, 0.9, 1.0]])
        stats = snapshot(f, f, DenseAdjacency(dense))
        assert stats.dirichlet_raw == 0.0
        assert stats.dirichlet_decoupled == 0.0

    def test_planted_antiparallel_pair_on_two_nodes(self):
        # both nodes carry mutually antiparallel slices: conflict rate 1,
        # decoupled slices vanish, so the decoupled energy is exactly zero
        values = np.array([[1.0, 0.0, -1.0, 0.0],
                           [0.0, 2.0, 0.0, -2.0]])
        f = GradientField(values, 2)
        dec = decouple(f)
        adj = DenseAdjacency(np.array([[1.0, 0.8], [0.8, 1.0]]))
        stats = snapshot(f, dec, adj)
        assert stats.conflict_rate == 1.0
        assert stats.dirichlet_decoupled == 0.0
        assert stats.dirichlet_raw > 0.0

    def test_snapshot_is_pure(self):
        rng = np.random.default_rng(5)
        values = rng.normal(size=(5, 6))
        f = GradientField(values.copy(), 3)
        dec = decouple(f)
        adj = DenseAdjacency(np.zeros((5, 5)))
        before = (f.values.tobytes(), dec.values.tobytes())
        snapshot(f, dec, adj)
        assert (f.values.tobytes(), dec.values.tobytes()) == before
