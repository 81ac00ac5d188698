import gzip

import numpy as np
import pytest

from selectmix.crossval import OofPredictions
from selectmix.datasets import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    Dataset,
    NoiseSpec,
    SyntheticSpec,
    cyclic_pair_map,
    gaussian_spec,
    gen_gaussian,
    idx_bytes,
    inject_noise,
    load_idx,
    read_csv,
    relabel_with_oof,
    write_csv,
    write_idx,
)
from selectmix.errors import FormatError, InputError, ShapeError, SpecError

from oracles import binomial_window

# 0.999 quantile of chi-square with 8 degrees of freedom (10 classes, 9 destinations)
CHI2_999_DF8 = 26.12448155837614


def _write_pair(tmp_path, images, labels, img_magic=IMAGES_MAGIC, lbl_magic=LABELS_MAGIC):
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ip.write_bytes(idx_bytes(images, img_magic))
    lp.write_bytes(idx_bytes(labels, lbl_magic))
    return ip, lp


def test_load_idx_shapes(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(10, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=10, dtype=np.uint8)
    ds = load_idx(*_write_pair(tmp_path, images, labels), num_classes=10)
    assert (len(ds), ds.dim) == (10, 784)
    assert np.array_equal(ds.clean_labels, labels) and np.array_equal(ds.noisy_labels, labels)
    assert not ds.flip_mask.any()
    np.testing.assert_array_equal(ds.features[3], images[3].ravel() / 255.0)


def test_load_idx_scaling_is_exact(tmp_path):
    images = np.array([[[0, 255], [128, 1]]], dtype=np.uint8)
    ds = load_idx(*_write_pair(tmp_path, images, np.array([0], dtype=np.uint8)), num_classes=2)
    assert ds.features[0, 1] == 1.0 and ds.features[0, 0] == 0.0


def test_load_idx_reads_gzip(tmp_path):
    images = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
    labels = np.array([1, 0], dtype=np.uint8)
    (tmp_path / "i.gz").write_bytes(gzip.compress(idx_bytes(images, IMAGES_MAGIC)))
    (tmp_path / "l.gz").write_bytes(gzip.compress(idx_bytes(labels, LABELS_MAGIC)))
    ds = load_idx(tmp_path / "i.gz", tmp_path / "l.gz")
    assert ds.num_classes == 2 and len(ds) == 2


def test_labels_with_image_magic_rejected(tmp_path):
    images = np.zeros((2, 2, 2), dtype=np.uint8)
    ip, lp = tmp_path / "i", tmp_path / "l"
    ip.write_bytes(idx_bytes(images, IMAGES_MAGIC))
    lp.write_bytes(idx_bytes(images, IMAGES_MAGIC))
    with pytest.raises(FormatError) as info:
        load_idx(ip, lp)
    assert info.value.field == "labels.magic"


def test_truncated_and_trailing_payload(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    ip, lp = _write_pair(tmp_path, images, np.zeros(3, dtype=np.uint8))
    blob = ip.read_bytes()
    ip.write_bytes(blob[:-1])
    with pytest.raises(FormatError) as info:
        load_idx(ip, lp)
    assert info.value.field == "images.payload"
    ip.write_bytes(blob + b"\x00")
    with pytest.raises(FormatError):
        load_idx(ip, lp)
    ip.write_bytes(blob[:6])
    with pytest.raises(FormatError) as info:
        load_idx(ip, lp)
    assert info.value.field == "images.dims"


def test_count_mismatch(tmp_path):
    ip, lp = _write_pair(tmp_path, np.zeros((3, 2, 2), dtype=np.uint8), np.zeros(2, dtype=np.uint8))
    with pytest.raises(FormatError) as info:
        load_idx(ip, lp)
    assert info.value.field == "count"


def test_idx_golden_bytes():
    images = np.array([[[1, 2], [3, 255]]], dtype=np.uint8)
    expected = bytes.fromhex("00000803" "00000001" "00000002" "00000002" "010203ff")
    assert idx_bytes(images, IMAGES_MAGIC) == expected
    assert idx_bytes(np.array([7, 0], dtype=np.uint8), LABELS_MAGIC) == bytes.fromhex("00000801000000020700")


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    images = rng.integers(0, 256, size=(25, 4, 4), dtype=np.uint8)
    labels = rng.integers(0, 5, size=25, dtype=np.uint8)
    ip, lp = _write_pair(tmp_path, images, labels)
    ds = load_idx(ip, lp, num_classes=5)
    write_idx(ds, tmp_path / "a.gz", tmp_path / "b.gz", image_shape=(4, 4))
    assert gzip.decompress((tmp_path / "a.gz").read_bytes()) == ip.read_bytes()
    assert gzip.decompress((tmp_path / "b.gz").read_bytes()) == lp.read_bytes()
    back = load_idx(tmp_path / "a.gz", tmp_path / "b.gz", num_classes=5)
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.clean_labels, ds.clean_labels)


def test_write_idx_rejects_non_pixel_features(tmp_path):
    ds = Dataset(np.array([[0.3]]), [0], 1)
    with pytest.raises(InputError):
        write_idx(ds, tmp_path / "i", tmp_path / "l")


def test_gaussian_class_counts_and_determinism():
    spec = gaussian_spec(num_classes=2, per_class_count=100)
    a, b = gen_gaussian(spec, 9), gen_gaussian(spec, 9)
    assert len(a) == 200
    assert np.bincount(a.clean_labels).tolist() == [100, 100]
    assert np.array_equal(a.features, b.features)
    assert not np.array_equal(a.features, gen_gaussian(spec, 10).features)


def test_gaussian_zero_stddev_collapses_to_means():
    spec = SyntheticSpec(3, 4, 2, np.array([[0.0, 1.0], [2.0, 0.0], [-1.0, -1.0]]), stddev=0.0)
    ds = gen_gaussian(spec, 0)
    np.testing.assert_array_equal(ds.features, spec.means[ds.clean_labels])


def test_synthetic_spec_rejects_duplicate_means():
    with pytest.raises(SpecError):
        SyntheticSpec(2, 3, 2, np.zeros((2, 2)))


def _ten_class(n=10_000, seed=0):
    y = np.random.default_rng(seed).integers(0, 10, n)
    return Dataset(np.zeros((n, 1)), y, 10, clean_labels=y)


def test_zero_rate_is_identity():
    ds = _ten_class(500)
    out = inject_noise(ds, NoiseSpec("symmetric", 0.0), seed=1)
    assert np.array_equal(out.noisy_labels, ds.clean_labels) and not out.flip_mask.any()


def test_forced_flip_binary():
    y = np.array([0, 1, 1, 0, 1])
    ds = Dataset(np.zeros((5, 1)), y, 2, clean_labels=y)
    out = inject_noise(ds, NoiseSpec("symmetric", 1.0), seed=3)
    assert np.array_equal(out.noisy_labels, 1 - y) and out.flip_mask.all()


def test_symmetric_flip_count_within_binomial_window():
    out = inject_noise(_ten_class(), NoiseSpec("symmetric", 0.4), seed=0)
    lo, hi = binomial_window(10_000, 0.4)
    assert (round(lo), round(hi)) == (3853, 4147)
    assert lo <= out.flip_mask.sum() <= hi


def test_symmetric_destinations_are_uniform():
    ds = _ten_class(50_000, seed=4)
    out = inject_noise(ds, NoiseSpec("symmetric", 0.5), seed=5)
    assert not (out.noisy_labels[out.flip_mask] == out.clean_labels[out.flip_mask]).any()
    for c in range(10):
        dest = out.noisy_labels[out.flip_mask & (out.clean_labels == c)]
        counts = np.bincount(dest, minlength=10)
        others = np.delete(counts, c)
        expected = others.sum() / 9
        chi2 = float(((others - expected) ** 2 / expected).sum())
        assert counts[c] == 0 and chi2 < CHI2_999_DF8


def test_asymmetric_flips_follow_pair_map():
    ds = _ten_class()
    out = inject_noise(ds, NoiseSpec("asymmetric", 0.3), seed=2)
    pairs = cyclic_pair_map(10)
    flipped = out.flip_mask
    assert all(pairs[int(c)] == int(n) for c, n in zip(out.clean_labels[flipped], out.noisy_labels[flipped]))
    lo, hi = binomial_window(10_000, 0.3)
    assert lo <= flipped.sum() <= hi


def test_asymmetric_partial_map_leaves_other_classes():
    ds = _ten_class(2_000)
    out = inject_noise(ds, NoiseSpec("asymmetric", 0.9, pair_map={3: 5}), seed=2)
    assert set(out.clean_labels[out.flip_mask].tolist()) == {3}
    assert set(out.noisy_labels[out.flip_mask].tolist()) == {5}


def test_noise_errors():
    with pytest.raises(SpecError):
        inject_noise(_ten_class(100), NoiseSpec("asymmetric", 0.2, pair_map={1: 1}), seed=0)
    one = Dataset(np.zeros((3, 1)), [0, 0, 0], 1, clean_labels=[0, 0, 0])
    with pytest.raises(SpecError):
        inject_noise(one, NoiseSpec("symmetric", 0.1), seed=0)
    with pytest.raises(SpecError):
        NoiseSpec("symmetric", 1.5)
    with pytest.raises(InputError):
        inject_noise(Dataset(np.zeros((2, 1)), [0, 1], 2), NoiseSpec("symmetric", 0.1), seed=0)


@pytest.mark.parametrize("kind", ["symmetric", "asymmetric", "instance_dependent"])
def test_noise_is_reproducible(kind):
    ds = gen_gaussian(gaussian_spec(num_classes=3, dim=3, per_class_count=300), 1)
    a = inject_noise(ds, NoiseSpec(kind, 0.3), seed=8)
    b = inject_noise(ds, NoiseSpec(kind, 0.3), seed=8)
    assert np.array_equal(a.noisy_labels, b.noisy_labels)
    assert np.array_equal(a.clean_labels, ds.clean_labels)


def test_instance_dependent_noise_targets_outliers():
    ds = gen_gaussian(gaussian_spec(num_classes=2, per_class_count=5_000), 0)
    out = inject_noise(ds, NoiseSpec("instance_dependent", 0.3), seed=1)
    lo, hi = binomial_window(10_000, 0.3, k=4)
    assert lo <= out.flip_mask.sum() <= hi
    dist = np.linalg.norm(ds.features - gaussian_spec().means[ds.clean_labels], axis=1)
    far = dist > np.median(dist)
    assert out.flip_mask[far].mean() > out.flip_mask[~far].mean() + 0.2


def test_relabel_with_oof():
    ds = Dataset(np.zeros((2, 1)), [0, 2], 3, clean_labels=[1, 2])
    out = relabel_with_oof(ds, OofPredictions.from_probs([[0, 0.2, 0.8], [0.1, 0, 0.9]]))
    assert out.noisy_labels.tolist() == [2, 2]
    assert out.clean_labels.tolist() == [1, 2]
    same = relabel_with_oof(ds, OofPredictions.from_probs(np.eye(3)[[0, 2]]))
    assert np.array_equal(same.noisy_labels, ds.noisy_labels)
    with pytest.raises(ShapeError):
        relabel_with_oof(ds, OofPredictions.from_probs(np.eye(3)))


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.zeros((2, 1)), [0, 3], 3)
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 1)), [0], 3)
    with pytest.raises(InputError):
        Dataset(np.zeros((2, 1)), [0, 1], 2, clean_labels=[0, 1], flip_mask=[True, False])


def test_csv_golden(tmp_path, golden_dir):
    ds = Dataset(np.array([[0.5, -1.25], [3.0, 0.1]]), [1, 1], 2, clean_labels=[0, 1])
    write_csv(ds, tmp_path / "ds.csv")
    assert (tmp_path / "ds.csv").read_bytes() == (golden_dir / "dataset.csv").read_bytes()


def test_csv_round_trip(tmp_path):
    ds = inject_noise(gen_gaussian(gaussian_spec(num_classes=3, dim=3, per_class_count=20), 2),
                      NoiseSpec("symmetric", 0.5), seed=0)
    write_csv(ds, tmp_path / "ds.csv")
    back = read_csv(tmp_path / "ds.csv", num_classes=3)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.noisy_labels, ds.noisy_labels)
    assert np.array_equal(back.flip_mask, ds.flip_mask)


def test_csv_bad_header(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FormatError):
        read_csv(tmp_path / "x.csv")
