import json

import numpy as np
import pytest

from mmgc.data import (
    MultimodalGraph,
    SynthGenParams,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from mmgc.errors import DatasetFormatError, InvalidConfigError


def small_params(**overrides):
    base = dict(num_nodes=200, num_classes=4, d_text=8, d_image=8,
                intra_class_edge_prob=0.2, inter_class_edge_prob=0.02,
                conflict_rate=0.5, feature_noise_std=0.3, seed=11)
    base.update(overrides)
    return SynthGenParams(**base)


class TestGenerator:
    def test_deterministic_bitwise(self):
        a = generate_synthetic(small_params())
        b = generate_synthetic(small_params())
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
        assert a.adjacency.indices.tobytes() == b.adjacency.indices.tobytes()
        assert a.train_idx.tobytes() == b.train_idx.tobytes()
        assert a.conflict_flags.tobytes() == b.conflict_flags.tobytes()

    def test_validates(self):
        generate_synthetic(small_params()).validate()

    def test_zero_conflict_noise_free_centers(self):
        g = generate_synthetic(small_params(conflict_rate=0.0,
                                            feature_noise_std=0.0))
        assert not g.conflict_flags.any()
        # image features sit exactly on the label's image center: nearest
        # center assignment recovers the label
        centers = np.unique(g.features[:, g.d_text:], axis=0)
        assert centers.shape[0] == g.num_classes
        for c in range(g.num_classes):
            rows = g.features[g.labels == c, g.d_text:]
            assert np.all(rows == rows[0])

    def test_full_conflict_two_classes(self):
        g = generate_synthetic(small_params(num_classes=2, conflict_rate=1.0,
                                            feature_noise_std=0.0))
        assert g.conflict_flags.all()
        # with C=2 every node's image features equal the *other* class center
        img = g.features[:, g.d_text:]
        class_imgs = [img[g.labels == c] for c in (0, 1)]
        assert np.all(class_imgs[0] == class_imgs[0][0])
        assert np.all(class_imgs[1] == class_imgs[1][0])
        assert not np.allclose(class_imgs[0][0], class_imgs[1][0])

    def test_planted_conflict_fraction(self):
        g = generate_synthetic(SynthGenParams(num_nodes=1000, num_classes=4,
                                              d_text=8, d_image=8,
                                              conflict_rate=0.6, seed=7))
        assert abs(g.conflict_flags.mean() - 0.6) <= 0.05

    def test_stratified_split_fractions(self):
        g = generate_synthetic(small_params())
        for c in range(g.num_classes):
            n_c = int((g.labels == c).sum())
            in_train = np.isin(g.train_idx, np.flatnonzero(g.labels == c)).sum()
            assert abs(in_train - 0.6 * n_c) <= 1.0

    def test_splits_cover_all_nodes(self):
        g = generate_synthetic(small_params())
        joined = np.concatenate([g.train_idx, g.val_idx, g.test_idx])
        assert np.array_equal(np.sort(joined), np.arange(g.num_nodes))

    def test_sbm_block_counts_within_three_sigma(self):
        p = SynthGenParams(num_nodes=1000, num_classes=2, d_text=4, d_image=4,
                           intra_class_edge_prob=0.05,
                           inter_class_edge_prob=0.005, seed=3)
        g = generate_synthetic(p)
        dense = g.adjacency.to_dense()
        for a in range(2):
            for b in range(a, 2):
                rows = np.flatnonzero(g.labels == a)
                cols = np.flatnonzero(g.labels == b)
                block = dense[np.ix_(rows, cols)]
                if a == b:
                    count = np.triu(block, k=1).sum()
                    pairs = len(rows) * (len(rows) - 1) / 2
                    prob = p.intra_class_edge_prob
                else:
                    count = block.sum()
                    pairs = len(rows) * len(cols)
                    prob = p.inter_class_edge_prob
                sigma = np.sqrt(pairs * prob * (1 - prob))
                assert abs(count - pairs * prob) <= 3 * sigma

    def test_rejects_more_classes_than_nodes(self):
        with pytest.raises(InvalidConfigError):
            generate_synthetic(small_params(num_nodes=3, num_classes=4))

    def test_rejects_bad_probability(self):
        with pytest.raises(InvalidConfigError):
            small_params(conflict_rate=1.5).validate()


class TestRoundTrip:
    def test_bitwise_roundtrip(self, tmp_path):
        g = generate_synthetic(small_params())
        save_dataset(g, tmp_path)
        back = load_dataset(tmp_path)
        assert back.features.tobytes() == g.features.tobytes()
        assert back.labels.tobytes() == g.labels.tobytes()
        assert back.adjacency.indptr.tobytes() == g.adjacency.indptr.tobytes()
        assert back.adjacency.indices.tobytes() == g.adjacency.indices.tobytes()
        assert back.adjacency.weights.tobytes() == g.adjacency.weights.tobytes()
        for mine, theirs in [(g.train_idx, back.train_idx),
                             (g.val_idx, back.val_idx),
                             (g.test_idx, back.test_idx)]:
            assert mine.tobytes() == theirs.tobytes()

    def test_regenerated_graph_matches_loaded(self, tmp_path):
        g = generate_synthetic(small_params())
        save_dataset(g, tmp_path)
        back = load_dataset(tmp_path)
        again = generate_synthetic(small_params())
        assert back.features.tobytes() == again.features.tobytes()

    def test_format_files_exist(self, tmp_path):
        save_dataset(generate_synthetic(small_params()), tmp_path)
        for name in ("meta.json", "features.f64", "labels.u32", "indptr.u64",
                     "indices.u64", "edgeweights.f64", "train.u64", "val.u64",
                     "test.u64"):
            assert (tmp_path / name).is_file(), name


class TestLoadErrors:
    def test_missing_file_named(self, tmp_path):
        save_dataset(generate_synthetic(small_params()), tmp_path)
        (tmp_path / "features.f64").unlink()
        with pytest.raises(DatasetFormatError, match="features.f64"):
            load_dataset(tmp_path)

    def test_shape_mismatch_named(self, tmp_path):
        g = generate_synthetic(small_params())
        save_dataset(g, tmp_path)
        # drop one row of features: meta says 200 rows, file holds 199
        g.features[:-1].astype("<f8").tofile(tmp_path / "features.f64")
        with pytest.raises(DatasetFormatError, match="features.f64"):
            load_dataset(tmp_path)

    def test_label_out_of_range(self, tmp_path):
        g = generate_synthetic(small_params())
        save_dataset(g, tmp_path)
        bad = g.labels.copy()
        bad[0] = g.num_classes
        bad.astype("<u4").tofile(tmp_path / "labels.u32")
        with pytest.raises(DatasetFormatError, match="labels.u32"):
            load_dataset(tmp_path)

    def test_asymmetric_edges_rejected(self, tmp_path):
        g = generate_synthetic(small_params())
        save_dataset(g, tmp_path)
        weights = np.fromfile(tmp_path / "edgeweights.f64", dtype="<f8")
        weights[0] += 0.5  # breaks (i,j) == (j,i) weight equality
        weights.tofile(tmp_path / "edgeweights.f64")
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path)

    def test_bad_meta_json(self, tmp_path):
        save_dataset(generate_synthetic(small_params()), tmp_path)
        (tmp_path / "meta.json").write_text("{not json")
        with pytest.raises(DatasetFormatError, match="meta.json"):
            load_dataset(tmp_path)

    def test_unsupported_version(self, tmp_path):
        save_dataset(generate_synthetic(small_params()), tmp_path)
        meta = json.loads((tmp_path / "meta.json").read_text())
        meta["format_version"] = 99
        (tmp_path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(DatasetFormatError, match="meta.json"):
            load_dataset(tmp_path)


class TestGraphValidation:
    def test_split_overlap_rejected(self):
        g = generate_synthetic(small_params())
        bad = MultimodalGraph(
            features=g.features, d_text=g.d_text, d_image=g.d_image,
            adjacency=g.adjacency, labels=g.labels, num_classes=g.num_classes,
            train_idx=g.train_idx, val_idx=g.train_idx[:1], test_idx=g.test_idx)
        with pytest.raises(InvalidConfigError):
            bad.validate()

    def test_bad_modality_split_rejected(self):
        g = generate_synthetic(small_params())
        bad = MultimodalGraph(
            features=g.features, d_text=g.feature_dim, d_image=0,
            adjacency=g.adjacency, labels=g.labels, num_classes=g.num_classes,
            train_idx=g.train_idx, val_idx=g.val_idx, test_idx=g.test_idx)
        with pytest.raises(InvalidConfigError):
            bad.validate()
