"""Dataset ingestion: the binary CIFAR-10 record format and the seeded
synthetic generator."""

import numpy as np
import pytest

from igdistill import data
from igdistill.errors import DataError


def write_cifar_files(directory, per_file_records):
    """Synthesize well-formed binary batch files with deterministic
    content; returns the label/pixel arrays used."""
    rng = np.random.default_rng(123)
    made = {}
    for name in data.CIFAR_TRAIN_FILES + data.CIFAR_TEST_FILES:
        records = np.empty((per_file_records, data.CIFAR_RECORD_BYTES),
                           dtype=np.uint8)
        records[:, 0] = rng.integers(0, 10, per_file_records)
        records[:, 1:] = rng.integers(0, 256,
                                      (per_file_records, 3072))
        (directory / name).write_bytes(records.tobytes())
        made[name] = records
    return made


class TestCifarLoader:
    def test_two_record_file(self, tmp_path):
        made = write_cifar_files(tmp_path, 2)
        train, test = data.load_cifar10_binary(tmp_path)
        assert len(train) == 10 and len(test) == 2
        first = made["data_batch_1.bin"][0]
        assert train.labels[0] == first[0]
        expected = first[1:].reshape(3, 32, 32).astype(np.float32) / 255.0
        np.testing.assert_array_equal(train.images[0], expected)

    def test_channel_planar_layout(self, tmp_path):
        # a record whose red plane is 255 and the rest zeros
        rec = np.zeros(data.CIFAR_RECORD_BYTES, dtype=np.uint8)
        rec[0] = 3
        rec[1:1025] = 255
        for name in data.CIFAR_TRAIN_FILES + data.CIFAR_TEST_FILES:
            (tmp_path / name).write_bytes(rec.tobytes())
        train, _ = data.load_cifar10_binary(tmp_path)
        np.testing.assert_array_equal(train.images[0, 0], 1.0)
        np.testing.assert_array_equal(train.images[0, 1:], 0.0)
        assert train.labels[0] == 3

    def test_all_zero_record_is_black_label_zero(self, tmp_path):
        zero = bytes(data.CIFAR_RECORD_BYTES)
        for name in data.CIFAR_TRAIN_FILES + data.CIFAR_TEST_FILES:
            (tmp_path / name).write_bytes(zero)
        train, test = data.load_cifar10_binary(tmp_path)
        assert train.labels[0] == 0
        np.testing.assert_array_equal(train.images[0], 0.0)

    def test_pixels_scaled_to_unit_interval(self, tmp_path):
        write_cifar_files(tmp_path, 4)
        train, test = data.load_cifar10_binary(tmp_path)
        for ds in (train, test):
            assert ds.images.min() >= 0.0
            assert ds.images.max() <= 1.0

    def test_truncated_file_reports_offset(self, tmp_path):
        write_cifar_files(tmp_path, 3)
        path = tmp_path / "data_batch_2.bin"
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(DataError, match="byte offset 6146"):
            data.load_cifar10_binary(tmp_path)

    def test_missing_file(self, tmp_path):
        write_cifar_files(tmp_path, 2)
        (tmp_path / "data_batch_5.bin").unlink()
        with pytest.raises(DataError, match="missing"):
            data.load_cifar10_binary(tmp_path)

    def test_stable_ids(self, tmp_path):
        write_cifar_files(tmp_path, 3)
        train1, _ = data.load_cifar10_binary(tmp_path)
        train2, _ = data.load_cifar10_binary(tmp_path)
        np.testing.assert_array_equal(train1.ids, train2.ids)
        assert train1.checksum() == train2.checksum()


class TestSyntheticGenerator:
    def test_seeded_determinism_is_byte_exact(self):
        a = data.generate_synthetic(5, seed=42)
        b = data.generate_synthetic(5, seed=42)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_different_seeds_differ(self):
        a = data.generate_synthetic(5, seed=1)
        b = data.generate_synthetic(5, seed=2)
        assert a.images.tobytes() != b.images.tobytes()

    def test_class_balanced(self):
        ds = data.generate_synthetic(7, classes=10)
        counts = np.bincount(ds.labels, minlength=10)
        np.testing.assert_array_equal(counts, 7)

    def test_unit_interval(self):
        ds = data.generate_synthetic(10, seed=3)
        assert ds.images.min() >= 0.0
        assert ds.images.max() <= 1.0

    def test_shapes_and_dtype(self):
        ds = data.generate_synthetic(2, classes=4, size=16, seed=0)
        assert ds.images.shape == (8, 3, 16, 16)
        assert ds.images.dtype == np.float32
        assert ds.labels.dtype == np.int64

    def test_within_class_variation(self):
        """Per-image jitter: two images of the same class differ."""
        ds = data.generate_synthetic(2, seed=9)
        same_class = ds.images[ds.labels == 3]
        assert not np.array_equal(same_class[0], same_class[1])

    def test_not_linearly_separable(self, train_set, test_set):
        """A linear probe on raw pixels stays well below the conv model's
        ceiling (phase-randomized patterns defeat pixel-space linear
        classifiers)."""
        x = train_set.images.reshape(len(train_set), -1)
        y = train_set.labels
        xt = test_set.images.reshape(len(test_set), -1)
        # ridge-regularized least squares one-vs-all probe
        onehot = np.eye(10)[y]
        a = x.T @ x + 1e-2 * np.eye(x.shape[1])
        w = np.linalg.solve(a, x.T @ onehot)
        acc = (np.argmax(xt @ w, axis=1) == test_set.labels).mean()
        assert acc < 0.85

    def test_validation(self):
        with pytest.raises(ValueError, match="n_per_class"):
            data.generate_synthetic(0)
        with pytest.raises(ValueError, match="classes"):
            data.generate_synthetic(1, classes=11)


class TestDataset:
    def test_subset_keeps_ids(self):
        ds = data.generate_synthetic(3, seed=5)
        sub = ds.subset(np.array([4, 7, 11]))
        np.testing.assert_array_equal(sub.ids, [4, 7, 11])
        np.testing.assert_array_equal(sub.images, ds.images[[4, 7, 11]])

    def test_checksum_sensitive_to_content(self):
        a = data.generate_synthetic(2, seed=0)
        b = data.generate_synthetic(2, seed=0)
        assert a.checksum() == b.checksum()
        b.labels[0] = (b.labels[0] + 1) % 10
        assert a.checksum() != b.checksum()

    def test_range_invariant_enforced(self):
        with pytest.raises(DataError, match="outside"):
            data.Dataset(images=np.full((1, 3, 2, 2), 1.5, dtype=np.float32),
                         labels=np.zeros(1, dtype=np.int64),
                         ids=np.zeros(1, dtype=np.int64))
