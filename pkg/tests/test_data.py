"""IDX parsing, splits, and the synthetic fixtures."""
import os
import struct
from pathlib import Path

import numpy as np
import pytest

import acttopo as at
from acttopo.data import IMAGES_MAGIC, LABELS_MAGIC
from acttopo.errors import ConsistencyError, FormatError, UsageError
from acttopo.learn import knn_predict


def write_idx(tmp_path, pixels: np.ndarray, labels: list[int],
              images_magic=IMAGES_MAGIC, labels_magic=LABELS_MAGIC):
    n, rows, cols = pixels.shape
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">IIII", images_magic, n, rows, cols) + pixels.tobytes())
    lp.write_bytes(struct.pack(">II", labels_magic, len(labels)) + bytes(labels))
    return ip, lp


class TestLoadIdx:
    def test_header_parsing(self, tmp_path):
        pixels = np.zeros((2, 28, 28), dtype=np.uint8)
        ds = at.load_idx(*write_idx(tmp_path, pixels, [3, 7]))
        assert len(ds) == 2
        assert ds.images[0].shape == (1, 28, 28)
        assert ds.labels == [3, 7]

    def test_normalization(self, tmp_path):
        pixels = np.array([[[255, 0], [128, 1]]], dtype=np.uint8)
        ds = at.load_idx(*write_idx(tmp_path, pixels, [0]))
        assert ds.images[0][0, 0, 0] == 1.0
        assert ds.images[0][0, 0, 1] == 0.0
        assert ds.images[0][0, 1, 0] == pytest.approx(128 / 255)

    def test_wrong_magic_rejected(self, tmp_path):
        pixels = np.zeros((1, 2, 2), dtype=np.uint8)
        ip, lp = write_idx(tmp_path, pixels, [0], labels_magic=IMAGES_MAGIC)
        with pytest.raises(FormatError, match="magic"):
            at.load_idx(ip, lp)
        ip2, lp2 = write_idx(tmp_path, pixels, [0], images_magic=LABELS_MAGIC)
        with pytest.raises(FormatError, match="magic"):
            at.load_idx(ip2, lp2)

    def test_count_mismatch(self, tmp_path):
        pixels = np.zeros((2, 2, 2), dtype=np.uint8)
        ip, lp = write_idx(tmp_path, pixels, [0, 1, 2])
        with pytest.raises(ConsistencyError):
            at.load_idx(ip, lp)

    @pytest.mark.skipif("MNIST_DIR" not in os.environ,
                        reason="set MNIST_DIR to run against the official files")
    def test_official_mnist_round_trip(self):
        base = Path(os.environ["MNIST_DIR"])
        candidates = [("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                      ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz")]
        for imgs, labs in candidates:
            if (base / imgs).exists():
                ds = at.load_idx(base / imgs, base / labs)
                assert len(ds) == 60_000
                assert sorted(set(ds.labels)) == list(range(10))
                return
        pytest.fail(f"no MNIST train files under {base}")

    def test_save_load_round_trip(self, tmp_path):
        ds = at.synthetic_digits(2, seed=5)
        at.save_idx(ds, tmp_path / "i.idx", tmp_path / "l.idx")
        back = at.load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
        assert back.labels == ds.labels
        worst = max(float(np.abs(a - b).max()) for a, b in zip(back.images, ds.images))
        assert worst <= 0.5 / 255 + 1e-12  # uint8 quantization only


class TestSplit:
    def test_partition(self):
        ds = at.synthetic_blobs(2, 5, 2, 4.0, seed=0)
        train, test = at.split(ds, 0.8, seed=1)
        assert len(train) == 8 and len(test) == 2
        def keys(d):
            return {(tuple(img.reshape(-1)), lab) for img, lab in zip(d.images, d.labels)}
        assert keys(train) | keys(test) == keys(ds)
        assert not keys(train) & keys(test)

    def test_determinism(self):
        ds = at.synthetic_blobs(3, 4, 2, 4.0, seed=0)
        a = at.split(ds, 0.5, seed=7)
        b = at.split(ds, 0.5, seed=7)
        assert a[0].labels == b[0].labels
        assert all(np.array_equal(x, y) for x, y in zip(a[0].images, b[0].images))

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5])
    def test_degenerate_fraction_rejected(self, fraction):
        ds = at.synthetic_blobs(2, 5, 2, 4.0, seed=0)
        with pytest.raises(UsageError):
            at.split(ds, fraction, seed=0)


class TestSyntheticBlobs:
    def test_counts(self):
        ds = at.synthetic_blobs(num_classes=3, per_class=5, dim=4, separation=3.0, seed=0)
        assert len(ds) == 15
        assert ds.class_counts() == {0: 5, 1: 5, 2: 5}

    def test_determinism(self):
        a = at.synthetic_blobs(2, 6, 3, 5.0, seed=9)
        b = at.synthetic_blobs(2, 6, 3, 5.0, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))

    def test_wide_separation_is_1nn_separable(self):
        ds = at.synthetic_blobs(num_classes=2, per_class=25, dim=3, separation=10.0, seed=1)
        pts = np.stack([im.reshape(-1) for im in ds.images])
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        np.fill_diagonal(d, np.inf)  # leave-one-out
        preds = knn_predict(d, ds.labels, k=1)
        assert np.array_equal(preds, ds.labels)

    def test_bad_parameters(self):
        with pytest.raises(UsageError):
            at.synthetic_blobs(0, 5, 2, 3.0)


class TestSyntheticDigits:
    def test_shapes_and_range(self):
        ds = at.synthetic_digits(3, seed=0)
        assert len(ds) == 30
        assert all(img.shape == (1, 28, 28) for img in ds.images)
        assert all(img.min() >= 0.0 and img.max() <= 1.0 for img in ds.images)

    def test_background_is_exactly_zero(self):
        ds = at.synthetic_digits(2, seed=3)
        zero_fraction = np.mean([np.mean(img == 0.0) for img in ds.images])
        assert zero_fraction > 0.4

    def test_determinism(self):
        a = at.synthetic_digits(2, seed=11)
        b = at.synthetic_digits(2, seed=11)
        assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))


class TestSubsetPerClass:
    def test_balanced_subset(self):
        ds = at.synthetic_digits(8, seed=0)
        sub = at.subset_per_class(ds, 3, seed=1)
        assert sub.class_counts() == {c: 3 for c in range(10)}

    def test_seeded(self):
        ds = at.synthetic_digits(5, seed=0)
        a = at.subset_per_class(ds, 2, seed=4)
        b = at.subset_per_class(ds, 2, seed=4)
        assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))
