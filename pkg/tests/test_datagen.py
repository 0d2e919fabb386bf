import numpy as np
import pytest

from noisyhash import datagen
from noisyhash.datagen import QUERY, RETRIEVAL, TRAIN, AugmentConfig, SynthConfig
from noisyhash.errors import ConfigError, DataError


def prepared(n_per_class=100, classes=10, clean=0.2, rate=0.0, seed=0):
    ds = datagen.generate_synthetic(SynthConfig(classes, n_per_class, 8, 6, seed=seed))
    ds = datagen.split(ds, seed=seed)
    ds = datagen.select_clean_subset(ds, clean, seed)
    return datagen.inject_noise(ds, rate, seed)


def all_train(n, seed=0):
    ds = datagen.generate_synthetic(SynthConfig(10, n // 10, 4, 4, seed=seed))
    return ds


def test_zero_spread_gives_centroids():
    ds = datagen.generate_synthetic(SynthConfig(3, 5, 4, 6, sigma_class=0.0))
    for c in range(3):
        rows = ds.image[ds.labels == c]
        assert np.all(rows == rows[0])
        assert np.linalg.norm(rows[0]) == pytest.approx(1.0, abs=1e-6)
        trows = ds.text[ds.labels == c]
        assert np.all(trows == trows[0])


def test_nearest_centroid_separates_two_classes():
    ds = datagen.generate_synthetic(SynthConfig(2, 100, 32, 32, sigma_class=0.1, seed=3))
    # centroids are drawn before the spread, so a zero-spread twin exposes them
    mu = datagen.generate_synthetic(SynthConfig(2, 2, 32, 32, sigma_class=0.0, seed=3)).image[[0, 2]]
    d = ((ds.image[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
    assert np.mean(d.argmin(axis=1) == ds.labels) == 1.0


def test_generation_deterministic_and_seed_sensitive():
    a = datagen.generate_synthetic(SynthConfig(seed=5))
    b = datagen.generate_synthetic(SynthConfig(seed=5))
    c = datagen.generate_synthetic(SynthConfig(seed=6))
    assert a == b
    assert a != c
    assert len(a) == 2000 and a.d_i == 32 and a.d_t == 32


def test_generated_values_float32_exact():
    ds = datagen.generate_synthetic(SynthConfig(seed=1))
    assert np.array_equal(ds.image.astype(np.float32).astype(np.float64), ds.image)


def test_synth_config_rejected():
    with pytest.raises(ConfigError):
        datagen.generate_synthetic(SynthConfig(num_classes=1))
    with pytest.raises(ConfigError):
        datagen.generate_synthetic(SynthConfig(sigma_class=-1.0))


def test_dataset_is_read_only():
    ds = all_train(20)
    with pytest.raises(ValueError):
        ds.image[0, 0] = 1.0


def test_dataset_validation():
    n = 3
    base = dict(ids=np.arange(n), image=np.zeros((n, 2)), text=np.zeros((n, 2)), labels=np.zeros(n),
                clean=np.zeros(n, bool), noisy=np.zeros(n, bool), split=np.zeros(n))
    with pytest.raises(DataError):
        datagen.Dataset(**{**base, "ids": [0, 0, 1]})
    with pytest.raises(DataError):
        datagen.Dataset(**{**base, "image": np.full((n, 2), np.nan)})
    with pytest.raises(DataError):
        datagen.Dataset(**{**base, "clean": np.ones(n, bool), "noisy": np.ones(n, bool)})
    with pytest.raises(DataError):
        datagen.Dataset(**{**base, "text": np.zeros((n + 1, 2))})


def test_split_sizes_and_partition():
    ds = datagen.split(datagen.generate_synthetic(SynthConfig()), (0.8, 0.1, 0.1), seed=2)
    sizes = [len(ds.indices(s)) for s in (TRAIN, QUERY, RETRIEVAL)]
    assert sizes == [1600, 200, 200]
    union = np.sort(np.concatenate([ds.indices(s) for s in (TRAIN, QUERY, RETRIEVAL)]))
    np.testing.assert_array_equal(union, np.arange(2000))
    again = datagen.split(datagen.generate_synthetic(SynthConfig()), (0.8, 0.1, 0.1), seed=2)
    np.testing.assert_array_equal(ds.split, again.split)


@pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.0), (0.7, 0.2, 0.2), (1.0,)])
def test_split_bad_ratios(ratios):
    with pytest.raises(ConfigError):
        datagen.split(all_train(20), ratios)


def test_clean_subset_count_and_boundary():
    ds = all_train(1000)
    marked = datagen.select_clean_subset(ds, 0.2, seed=1)
    assert marked.clean.sum() == 200
    with pytest.raises(ConfigError):
        datagen.select_clean_subset(ds, 1.0)
    # fraction so small that nothing is selected
    with pytest.raises(ConfigError):
        datagen.select_clean_subset(ds, 0.0005)


def test_noise_counts_and_disjointness():
    ds = datagen.select_clean_subset(all_train(1000), 0.2, seed=4)
    noisy = datagen.inject_noise(ds, 0.5, seed=4)
    assert noisy.noisy.sum() == 500
    assert not np.any(noisy.noisy & noisy.clean)
    assert noisy.clean.sum() == 200


def test_noise_rate_zero_is_identity():
    ds = datagen.select_clean_subset(all_train(200), 0.2)
    assert datagen.inject_noise(ds, 0.0) == ds


def test_noise_derangement_scan():
    before = datagen.select_clean_subset(all_train(1000), 0.2, seed=7)
    after = datagen.inject_noise(before, 0.3, seed=7)
    for i in np.flatnonzero(after.noisy):
        assert not np.array_equal(after.text[i], before.text[i])
    for i in np.flatnonzero(~after.noisy):
        assert np.array_equal(after.text[i], before.text[i])
    np.testing.assert_array_equal(after.image, before.image)


def test_noise_beyond_pool_rejected():
    ds = datagen.select_clean_subset(all_train(100), 0.5)
    with pytest.raises(ConfigError):
        datagen.inject_noise(ds, 0.6)


def test_noise_only_counts_train_split():
    ds = prepared(rate=0.3)
    train = ds.indices(TRAIN)
    assert ds.noisy.sum() == datagen.noisy_count(0.3, len(train)) == 240
    assert not ds.noisy[ds.split != TRAIN].any()


def test_derangement_has_no_fixed_points():
    rng = np.random.default_rng(0)
    for n in (2, 3, 10, 100):
        for _ in range(20):
            p = datagen.random_derangement(n, rng)
            assert sorted(p) == list(range(n))
            assert not np.any(p == np.arange(n))


def test_augment_identity_and_full_drop():
    x = np.random.default_rng(0).normal(size=(5, 10))
    np.testing.assert_array_equal(datagen.augment(x, AugmentConfig(0.0, 0.0), seed=1), x)
    assert not datagen.augment(x, AugmentConfig(0.3, 1.0), seed=1).any()


def test_augment_drops_rounded_count_per_row():
    x = np.ones((50, 20))
    out = datagen.augment(x, AugmentConfig(0.0, 0.25), seed=2)
    np.testing.assert_array_equal((out == 0).sum(axis=1), 5)


def test_augment_jitter_variance():
    x = np.zeros((1000, 100))
    out = datagen.augment(x, AugmentConfig(0.1, 0.0), seed=3)
    assert np.mean(out ** 2) == pytest.approx(0.01, rel=0.05)


def test_augment_rejects_non_finite():
    with pytest.raises(DataError):
        datagen.augment(np.array([[np.inf]]))


def test_batch_counts():
    ds = datagen.generate_synthetic(SynthConfig(10, 10, 4, 4))
    batches = datagen.make_batches(ds, 30, "main", seed=0, epoch=0)
    assert len(batches) == 3
    used = np.concatenate([b.indices for b in batches])
    assert len(np.unique(used)) == 90


def test_meta_batches_only_clean():
    ds = prepared(rate=0.4)
    for b in datagen.make_batches(ds, 16, "meta", seed=1, epoch=3):
        assert ds.clean[b.indices].all()
        np.testing.assert_array_equal(b.x, ds.image[b.indices])


def test_epoch_orderings_differ_and_repeat():
    ds = prepared()
    first = datagen.make_batches(ds, 32, "main", seed=0, epoch=0)
    second = datagen.make_batches(ds, 32, "main", seed=0, epoch=1)
    again = datagen.make_batches(ds, 32, "main", seed=0, epoch=0)
    assert not np.array_equal(first[0].indices, second[0].indices)
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.x_aug, b.x_aug)


def test_batch_pool_too_small():
    ds = prepared()
    with pytest.raises(ConfigError):
        datagen.make_batches(ds, 10_000, "main")
    with pytest.raises(ConfigError):
        datagen.make_batches(ds, 8, "warmup")
