"""
Noise discriminator over image-text joint features.

The discriminator is trained on clean pairs only: true pairs are labelled 1
and pairs produced by the feature mixer (text rows deranged within the batch)
are labelled 0. Once frozen it scores training pairs; the score is the pair's
weight in the contrastive losses.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .datagen import random_derangement
from .errors import ConfigError, NumericError

LOG_EPS = 1e-12


def concat_joint(x, y):
    """Joint feature(s): image part first, text part second.

    Works on single vectors or row-aligned matrices.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] == 0 or y.shape[-1] == 0:
        raise ConfigError("both modalities need at least one feature")
    if x.shape[:-1] != y.shape[:-1]:
        raise ConfigError(f"cannot pair image shape {x.shape} with text shape {y.shape}")
    return np.concatenate([x, y], axis=-1)


def mix(x, y, rng=None, seed=0):
    """Semantically incoherent joint features: ``concat(x, y[perm])`` for a derangement ``perm``.

    Returns the mixed matrix and the permutation used.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    m = len(x)
    if m < 2:
        raise ConfigError("mixing needs at least 2 pairs")
    perm = random_derangement(m, rng)
    return concat_joint(x, np.asarray(y)[perm]), perm


def discriminator_loss(dn, x, y, x_aug, y_aug, rng=None, seed=0):
    """Binary cross-entropy of clean (target 1) vs mixed (target 0) joint features.

    Both the original and the augmented views contribute, and the sum is
    divided by the number of clean joint features (2M), so a constant 0.5
    output gives 2 ln 2. Returns ``(loss, param_grads)``.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    m = len(x)
    mixed, _ = mix(x, y, rng)
    mixed_aug, _ = mix(x_aug, y_aug, rng)
    z = np.concatenate([concat_joint(x, y), concat_joint(x_aug, y_aug), mixed, mixed_aug])
    target = np.concatenate([np.ones(2 * m), np.zeros(2 * m)])

    out, cache = nn.forward(dn, z, "train")
    if out.shape[1] != 1:
        raise ConfigError("the discriminator must have a single output")
    p = out[:, 0]
    if not np.all(np.isfinite(p)):
        raise NumericError("non-finite discriminator output")
    pc = np.clip(p, LOG_EPS, 1.0 - LOG_EPS)
    inside = (p > LOG_EPS) & (p < 1.0 - LOG_EPS)
    n_clean = 2 * m
    loss = -(np.log(pc[target == 1]).sum() + np.log(1.0 - pc[target == 0]).sum()) / n_clean
    dp = np.where(target == 1, -1.0 / pc, 1.0 / (1.0 - pc)) / n_clean
    dp = np.where(inside, dp, 0.0)
    grads, _ = nn.backward(dn, cache, dp[:, None])
    return float(loss), grads


def discriminator_step(dn, opt, batch, rng):
    loss, grads = discriminator_loss(dn, batch.x, batch.y, batch.x_aug, batch.y_aug, rng)
    nn.adam_step(dn, grads, opt)
    return loss


def meta_train_discriminator(dn, batches_for_epoch, epochs, opt, seed=0):
    """Train ``dn`` for ``epochs`` over clean-subset batches.

    ``batches_for_epoch(epoch)`` returns that epoch's batches. Returns the
    mean loss of every epoch.
    """
    history = []
    for epoch in range(epochs):
        rng = np.random.default_rng([int(seed), 21, epoch])
        losses = [discriminator_step(dn, opt, b, rng) for b in batches_for_epoch(epoch)]
        history.append(float(np.mean(losses)))
    return history


def assign_weights(dn, z):
    """Frozen-discriminator scores in [0, 1], one per joint-feature row."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != dn.in_dim:
        raise ConfigError(f"joint features of shape {z.shape} do not fit discriminator input {dn.in_dim}")
    out, _ = nn.forward(dn, z, "eval")
    return out[:, 0]


def threshold_weights(w):
    return (np.asarray(w, dtype=np.float64) >= 0.5).astype(np.float64)


def discriminator_accuracy(dn, x, y, seed=0):
    """Accuracy at threshold 0.5 on true pairs (label 1) plus one mixed copy (label 0)."""
    mixed, _ = mix(x, y, seed=seed)
    clean_pred = assign_weights(dn, concat_joint(x, y)) >= 0.5
    mixed_pred = assign_weights(dn, mixed) >= 0.5
    return float((clean_pred.sum() + (~mixed_pred).sum()) / (2 * len(x)))
