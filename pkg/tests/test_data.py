import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfflab.data import (
    CIFAR_RECORD,
    PROFILES,
    RECIPES,
    AugmentConfig,
    CifarFormatError,
    ImageDataset,
    augment,
    load_cifar_binary,
    load_profiles,
    make_synthetic_blobs,
    make_synthetic_split,
    make_two_view_batch,
    split_validation,
    write_cifar_binary,
)
from cfflab.loss import positive_mask
from cfflab.training import TrainConfig, stage2_linear_probe

PLAIN = AugmentConfig(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))


def _random_records(rng, n):
    return rng.integers(0, 256, (n, 3, 32, 32), dtype=np.uint8), rng.integers(0, 10, n)


# -- CIFAR binary -------------------------------------------------------------

def test_two_records_shape(tmp_path, rng):
    imgs, labels = _random_records(rng, 2)
    write_cifar_binary(tmp_path / "b.bin", imgs, labels)
    ds = load_cifar_binary(tmp_path / "b.bin")
    assert len(ds) == 2 and ds.images.shape == (2, 3, 32, 32)


def test_zero_record(tmp_path):
    raw = bytearray(CIFAR_RECORD)
    raw[0] = 7
    (tmp_path / "z.bin").write_bytes(bytes(raw))
    ds = load_cifar_binary(tmp_path / "z.bin")
    assert ds.labels.tolist() == [7] and not ds.images.any()


def test_round_trip_is_bit_exact(tmp_path, rng):
    imgs, labels = _random_records(rng, 5)
    write_cifar_binary(tmp_path / "r.bin", imgs, labels)
    ds = load_cifar_binary(tmp_path / "r.bin")
    np.testing.assert_array_equal(ds.labels, labels)
    np.testing.assert_array_equal(np.rint(ds.images * 255).astype(np.uint8), imgs)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_channel_planar_layout(tmp_path):
    raw = bytearray(CIFAR_RECORD)
    raw[1] = 255  # R plane, pixel (0, 0)
    raw[1 + 1024 + 33] = 255  # G plane, pixel (1, 1)
    (tmp_path / "p.bin").write_bytes(bytes(raw))
    img = load_cifar_binary(tmp_path / "p.bin").images[0]
    assert img[0, 0, 0] == 1.0 and img[1, 1, 1] == 1.0 and img.sum() == 2.0


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 3), extra=st.integers(1, CIFAR_RECORD - 1))
def test_truncation_error_reports_offset(tmp_path_factory, n, extra):
    path = tmp_path_factory.mktemp("t") / "t.bin"
    path.write_bytes(bytes(n * CIFAR_RECORD + extra))
    with pytest.raises(CifarFormatError) as err:
        load_cifar_binary(path)
    assert err.value.offset == n * CIFAR_RECORD
    assert str(n * CIFAR_RECORD) in str(err.value)


def test_bad_label_error_reports_offset(tmp_path):
    raw = bytearray(3 * CIFAR_RECORD)
    raw[2 * CIFAR_RECORD] = 12
    (tmp_path / "l.bin").write_bytes(bytes(raw))
    with pytest.raises(CifarFormatError) as err:
        load_cifar_binary(tmp_path / "l.bin", num_classes=10)
    assert err.value.offset == 2 * CIFAR_RECORD
    # the same file is fine for a 100-class reader
    assert len(load_cifar_binary(tmp_path / "l.bin", num_classes=100)) == 3


def test_empty_file(tmp_path):
    (tmp_path / "e.bin").write_bytes(b"")
    with pytest.raises(CifarFormatError) as err:
        load_cifar_binary(tmp_path / "e.bin")
    assert err.value.offset == 0


# -- synthetic ----------------------------------------------------------------

def test_noise_free_classes_are_constant():
    ds = make_synthetic_blobs(4, 6, noise_std=0.0, seed=1)
    for k in range(4):
        imgs = ds.images[ds.labels == k]
        assert np.all(imgs == imgs[0])
    assert len({ds.images[ds.labels == k][0].tobytes() for k in range(4)}) == 4


def test_same_seed_same_dataset():
    a, b = make_synthetic_blobs(3, 10, seed=9), make_synthetic_blobs(3, 10, seed=9)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, make_synthetic_blobs(3, 10, seed=10).images)


def test_raw_pixel_probe_separates_two_classes():
    train, test = make_synthetic_split(2, 100, 100, noise_std=0.35, seed=0)
    flat = lambda d: d.images.reshape(len(d), -1)  # noqa: E731
    res = stage2_linear_probe((flat(train), train.labels), None, (flat(test), test.labels), 2,
                              TrainConfig(stage2_epochs=20), np.random.default_rng(0))
    assert res.test_accuracy > 90.0


def test_split_is_disjoint_and_balanced():
    train, test = make_synthetic_split(3, 20, 10, seed=0)
    assert np.bincount(train.labels).tolist() == [20] * 3 and np.bincount(test.labels).tolist() == [10] * 3
    rows = {img.tobytes() for img in train.images}
    assert not any(img.tobytes() in rows for img in test.images)


def test_validation_split_is_seeded():
    ds = make_synthetic_blobs(3, 10, seed=0)
    tr1, va1 = split_validation(ds, 6, np.random.default_rng(4))
    tr2, va2 = split_validation(ds, 6, np.random.default_rng(4))
    assert len(va1) == 6 and len(tr1) == 24
    np.testing.assert_array_equal(va1.images, va2.images)
    with pytest.raises(ValueError):
        split_validation(ds, 0, np.random.default_rng(0))


def test_dataset_validation():
    with pytest.raises(ValueError):
        ImageDataset(np.zeros((2, 3, 4, 4)), np.array([0, 3]), 3)
    with pytest.raises(ValueError):
        make_synthetic_blobs(1, 5)


# -- augmentation ---------------------------------------------------------------

def test_identity_pipeline_is_normalization(rng):
    cfg = PROFILES["cifar10"].augment_config("identity")
    img = rng.random((3, 8, 8))
    expected = (img - np.array(cfg.mean)[:, None, None]) / np.array(cfg.std)[:, None, None]
    np.testing.assert_array_equal(augment(img, cfg, rng), expected)


def test_forced_flip_twice_is_identity(rng):
    cfg = AugmentConfig(hflip_prob=1.0, mean=PLAIN.mean, std=PLAIN.std)
    img = rng.random((3, 6, 6))
    once = augment(img, cfg, rng)
    np.testing.assert_array_equal(once, img[:, :, ::-1])
    np.testing.assert_array_equal(augment(once, cfg, rng), img)


@pytest.mark.parametrize("pad", [1, 2, 4, 12])
def test_crop_index_mapping(pad):
    img = np.random.default_rng(pad).random((3, 8, 8))
    cfg = AugmentConfig(crop_padding=pad, mean=PLAIN.mean, std=PLAIN.std)
    rng = np.random.default_rng(100 + pad)
    dy, dx = np.random.default_rng(100 + pad).integers(0, 2 * pad + 1, size=2)
    out = augment(img, cfg, rng)
    padded = np.zeros((3, 8 + 2 * pad, 8 + 2 * pad))
    padded[:, pad:pad + 8, pad:pad + 8] = img
    for i in range(8):
        for j in range(8):
            np.testing.assert_array_equal(out[:, i, j], padded[:, i + dy, j + dx])


def test_rotation_by_zero_range_is_identity(rng):
    from cfflab.data import _rotate

    img = rng.random((3, 7, 7))
    np.testing.assert_array_equal(_rotate(img, 0.0), img)
    np.testing.assert_array_equal(_rotate(_rotate(img, 90.0), -90.0), img)


@settings(max_examples=30, deadline=None)
@given(recipe=st.sampled_from(sorted(RECIPES)), seed=st.integers(0, 2**32 - 1))
def test_augmented_values_stay_in_normalized_range(recipe, seed):
    rng = np.random.default_rng(seed)
    cfg = PROFILES["cifar10"].augment_config(recipe)
    out = augment(rng.random((3, 16, 16)), cfg, rng)
    mean, std = np.array(cfg.mean)[:, None, None], np.array(cfg.std)[:, None, None]
    assert np.all(out >= (0 - mean) / std - 1e-12) and np.all(out <= (1 - mean) / std + 1e-12)


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(hflip_prob=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(crop_padding=-1)
    with pytest.raises(ValueError):
        AugmentConfig(erasing_scale=(0.5, 0.2))


def test_load_profiles(tmp_path):
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps({"tiny": {"mean": [0.1, 0.2, 0.3], "std": [0.3, 0.3, 0.3], "recipe": "hard"}}))
    prof = load_profiles(path)["tiny"]
    assert prof.augment_config().erasing_prob == 0.5 and prof.mean == (0.1, 0.2, 0.3)


# -- two-view batches ---------------------------------------------------------------

def test_identity_views_are_equal():
    ds = make_synthetic_blobs(3, 4, seed=0)
    vb = make_two_view_batch(ds, np.arange(6), PROFILES["synthetic"].augment_config("identity"),
                             np.random.default_rng(0))
    np.testing.assert_array_equal(vb.views[:6], vb.views[6:])


def test_view_labels_and_positive_rows():
    ds = make_synthetic_blobs(3, 4, seed=0)
    idx = np.array([0, 5, 7, 2, 11])
    vb = make_two_view_batch(ds, idx, PROFILES["synthetic"].augment_config(), np.random.default_rng(0))
    B = len(idx)
    assert vb.views.shape[0] == 2 * B
    np.testing.assert_array_equal(vb.labels[:B], vb.labels[B:])
    np.testing.assert_array_equal(vb.labels[:B], ds.labels[idx])
    M = positive_mask(vb.labels)
    assert np.all(M.sum(axis=1) >= 1)
    assert all(M[u, u + B] for u in range(B))


def test_independent_draws_per_view():
    ds = make_synthetic_blobs(3, 4, seed=0)
    vb = make_two_view_batch(ds, np.arange(6), PROFILES["synthetic"].augment_config(), np.random.default_rng(0))
    assert not np.array_equal(vb.views[:6], vb.views[6:])


def test_positive_pair_count_matches_accounting():
    rng = np.random.default_rng(0)
    B, K = 512, 10
    view_counts, image_counts = [], []
    for _ in range(50):
        y = rng.integers(0, K, B)
        view_counts.append(positive_mask(np.concatenate([y, y])).sum())
        image_counts.append(positive_mask(y).sum())
    assert abs(np.mean(view_counts) / (2 * B * (2 * B / K - 1)) - 1) < 0.05
    # per-image accounting (ordered pairs of distinct images) gives the ~25,700 figure
    assert abs(np.mean(image_counts) / 25_700 - 1) < 0.05
