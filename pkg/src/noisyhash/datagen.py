"""
Multi-modal feature datasets: synthetic generation, splits, clean-subset
marking, miscaption noise injection, feature-space augmentation and batching.

A ``Dataset`` stores its records column-wise as read-only numpy arrays. Every
transformation returns a new dataset; nothing is modified in place.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

TRAIN, QUERY, RETRIEVAL = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", QUERY: "query", RETRIEVAL: "retrieval"}


def rng_for(seed, *tags):
    """Independent generator for ``seed`` and a tuple of integer tags."""
    return np.random.default_rng([int(seed), *[int(t) for t in tags]])


# stream tags so unrelated draws never share a generator
TAG_SPLIT, TAG_CLEAN, TAG_NOISE, TAG_BATCH, TAG_AUG_IMG, TAG_AUG_TXT = 11, 12, 13, 14, 15, 16


@dataclass(frozen=True)
class FeatureRecord:
    id: int
    image_vec: np.ndarray
    text_vec: np.ndarray
    class_label: int
    is_clean_subset: bool
    is_injected_noisy: bool


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    ids: np.ndarray
    image: np.ndarray
    text: np.ndarray
    labels: np.ndarray | None
    clean: np.ndarray
    noisy: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        object.__setattr__(self, "ids", _frozen(self.ids, np.int64))
        object.__setattr__(self, "image", _frozen(self.image, np.float64))
        object.__setattr__(self, "text", _frozen(self.text, np.float64))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "clean", _frozen(self.clean, bool))
        object.__setattr__(self, "noisy", _frozen(self.noisy, bool))
        object.__setattr__(self, "split", _frozen(self.split, np.int8))
        if self.image.ndim != 2 or self.text.ndim != 2:
            raise DataError("feature arrays must be two-dimensional")
        cols = [self.image, self.text, self.clean, self.noisy, self.split]
        if self.labels is not None:
            cols.append(self.labels)
        if any(len(c) != n for c in cols):
            raise DataError("dataset columns differ in length")
        if self.image.shape[1] < 1 or self.text.shape[1] < 1:
            raise DataError("feature dimensions must be positive")
        if len(np.unique(self.ids)) != n:
            raise DataError("record ids must be unique")
        if not (np.all(np.isfinite(self.image)) and np.all(np.isfinite(self.text))):
            raise DataError("non-finite feature values")
        if np.any(self.clean & self.noisy):
            raise DataError("a record cannot be both clean-subset and injected-noisy")
        if not np.all(np.isin(self.split, (TRAIN, QUERY, RETRIEVAL))):
            raise DataError("unknown split code")
        if self.labels is not None and np.any(self.labels < 0):
            raise DataError("class labels must be non-negative")

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.labels is None) != (other.labels is None):
            return False
        fields = ("ids", "image", "text", "clean", "noisy", "split")
        same = all(np.array_equal(getattr(self, f), getattr(other, f)) for f in fields)
        return same and (self.labels is None or np.array_equal(self.labels, other.labels))

    @property
    def d_i(self):
        return self.image.shape[1]

    @property
    def d_t(self):
        return self.text.shape[1]

    def indices(self, split):
        return np.flatnonzero(self.split == split)

    @property
    def train_size(self):
        return int(np.count_nonzero(self.split == TRAIN))

    def record(self, i):
        return FeatureRecord(
            int(self.ids[i]), self.image[i], self.text[i],
            -1 if self.labels is None else int(self.labels[i]),
            bool(self.clean[i]), bool(self.noisy[i]),
        )

    def records(self):
        return [self.record(i) for i in range(len(self))]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 10
    samples_per_class: int = 200
    d_i: int = 32
    d_t: int = 32
    sigma_class: float = 0.15
    centroid_scale: float = 1.0
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.samples_per_class < 1 or self.d_i < 1 or self.d_t < 1:
            raise ConfigError("samples_per_class, d_i and d_t must be positive")
        if self.num_classes * self.samples_per_class < 3:
            raise ConfigError("need at least 3 records to form train/query/retrieval splits")
        if self.sigma_class < 0 or self.centroid_scale <= 0:
            raise ConfigError("sigma_class must be >= 0 and centroid_scale > 0")


def generate_synthetic(cfg):
    """Class-structured image/text features around random per-class centroids.

    Each class gets one image centroid and one independent text centroid, both
    of norm ``centroid_scale``. All records start in the train split. Values
    are float32-representable.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    def centroids(d):
        c = rng.standard_normal((cfg.num_classes, d))
        return cfg.centroid_scale * c / np.linalg.norm(c, axis=1, keepdims=True)

    mu_img = centroids(cfg.d_i)
    mu_txt = centroids(cfg.d_t)
    labels = np.repeat(np.arange(cfg.num_classes), cfg.samples_per_class)
    n = len(labels)
    image = mu_img[labels] + cfg.sigma_class * rng.standard_normal((n, cfg.d_i))
    text = mu_txt[labels] + cfg.sigma_class * rng.standard_normal((n, cfg.d_t))
    # round through float32 so the feature file format stores values exactly
    image = image.astype(np.float32).astype(np.float64)
    text = text.astype(np.float32).astype(np.float64)
    return Dataset(
        ids=np.arange(n), image=image, text=text, labels=labels,
        clean=np.zeros(n, bool), noisy=np.zeros(n, bool), split=np.zeros(n, np.int8),
    )


def split(ds, ratios=(0.8, 0.1, 0.1), seed=0):
    """Random train/query/retrieval assignment with sizes rounded from ``ratios``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {ratios.tolist()}")
    n = len(ds)
    n_query = int(np.floor(ratios[1] * n + 0.5))
    n_retr = int(np.floor(ratios[2] * n + 0.5))
    n_train = n - n_query - n_retr
    if min(n_train, n_query, n_retr) < 1:
        raise ConfigError(f"split sizes {n_train}/{n_query}/{n_retr} leave a split empty")
    perm = rng_for(seed, TAG_SPLIT).permutation(n)
    assign = np.empty(n, np.int8)
    assign[perm[:n_train]] = TRAIN
    assign[perm[n_train:n_train + n_query]] = QUERY
    assign[perm[n_train + n_query:]] = RETRIEVAL
    return ds.replace(split=assign, clean=np.zeros(n, bool), noisy=np.zeros(n, bool))


def select_clean_subset(ds, fraction, seed=0):
    """Mark floor(fraction * N) uniformly chosen train records as the clean subset."""
    train = ds.indices(TRAIN)
    n = len(train)
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"clean fraction must lie in (0, 1), got {fraction}")
    count = int(np.floor(fraction * n))
    if count < 1:
        raise ConfigError(f"clean fraction {fraction} selects no records out of {n}")
    if count >= n:
        raise ConfigError("the clean subset must be strictly smaller than the train split")
    if np.any(ds.noisy):
        raise ConfigError("select the clean subset before injecting noise")
    chosen = rng_for(seed, TAG_CLEAN).choice(train, size=count, replace=False)
    clean = np.zeros(len(ds), bool)
    clean[chosen] = True
    return ds.replace(clean=clean)


def random_derangement(n, rng):
    """Uniform random permutation of range(n) without fixed points."""
    if n < 2:
        raise ConfigError("a derangement needs at least 2 elements")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def noisy_count(rate, train_size):
    return int(np.floor(rate * train_size + 0.5))


def inject_noise(ds, rate, seed=0):
    """Miscaption a ``rate`` fraction of the train split.

    The count is taken over the whole train split but drawn only from records
    outside the clean subset. Selected records exchange text vectors through a
    derangement, so each one ends up with another record's caption.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"noise rate must lie in [0, 1], got {rate}")
    if np.any(ds.noisy):
        raise ConfigError("noise has already been injected into this dataset")
    train = ds.indices(TRAIN)
    count = noisy_count(rate, len(train))
    if count == 0:
        return ds
    if not np.any(ds.clean):
        raise ConfigError("select the clean subset before injecting noise")
    pool = train[~ds.clean[train]]
    if count > len(pool):
        raise ConfigError(f"{count} noisy records requested but only {len(pool)} lie outside the clean subset")
    rng = rng_for(seed, TAG_NOISE)
    chosen = np.sort(rng.choice(pool, size=count, replace=False))
    perm = random_derangement(count, rng)
    text = ds.text.copy()
    text[chosen] = ds.text[chosen[perm]]
    noisy = np.zeros(len(ds), bool)
    noisy[chosen] = True
    return ds.replace(text=text, noisy=noisy)


@dataclass(frozen=True)
class AugmentConfig:
    sigma: float = 0.1
    drop: float = 0.1


def augment(features, cfg=AugmentConfig(), rng=None, seed=0):
    """Gaussian jitter followed by per-row dropout of round(drop * d) coordinates."""
    x = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite features passed to augment")
    if not 0.0 <= cfg.drop <= 1.0 or cfg.sigma < 0:
        raise ConfigError("augmentation needs sigma >= 0 and drop in [0, 1]")
    if rng is None:
        rng = np.random.default_rng(seed)
    out = x + cfg.sigma * rng.standard_normal(x.shape) if cfg.sigma > 0 else x.copy()
    n_drop = int(np.floor(cfg.drop * x.shape[1] + 0.5))
    if n_drop > 0:
        # argsort of uniform keys gives an independent random subset per row
        cols = np.argsort(rng.random(x.shape), axis=1)[:, :n_drop]
        np.put_along_axis(out, cols, 0.0, axis=1)
    return out


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray
    x_aug: np.ndarray
    y_aug: np.ndarray

    def __len__(self):
        return len(self.indices)


def batch_pool(ds, phase):
    train = ds.indices(TRAIN)
    if phase == "meta":
        return train[ds.clean[train]]
    if phase == "main":
        return train
    raise ConfigError(f"phase must be 'meta' or 'main', got {phase!r}")


def make_batches(ds, batch_size, phase, seed=0, epoch=0,
                 aug_image=AugmentConfig(), aug_text=AugmentConfig()):
    """Shuffle the phase's pool for ``epoch`` and cut it into full batches.

    The trailing partial batch is dropped. Each batch carries freshly drawn
    augmentations of its image and text rows.
    """
    pool = batch_pool(ds, phase)
    if batch_size < 1 or len(pool) < batch_size:
        raise ConfigError(f"{phase} pool of {len(pool)} records cannot fill a batch of {batch_size}")
    phase_tag = 0 if phase == "meta" else 1
    order = pool[rng_for(seed, TAG_BATCH, phase_tag, epoch).permutation(len(pool))]
    batches = []
    for b in range(len(pool) // batch_size):
        idx = order[b * batch_size:(b + 1) * batch_size]
        x, y = ds.image[idx], ds.text[idx]
        batches.append(Batch(
            idx, x, y,
            augment(x, aug_image, rng_for(seed, TAG_AUG_IMG, phase_tag, epoch, b)),
            augment(y, aug_text, rng_for(seed, TAG_AUG_TXT, phase_tag, epoch, b)),
        ))
    return batches
