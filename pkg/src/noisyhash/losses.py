"""
Weighted contrastive hashing objectives and the binary code update.

Contrastive terms are NT-Xent style with an anchor-weighted numerator:

    -w_j * log( S(a_j, o_j) / (sum_{k!=j} S(a_j, a_k) + sum_k S(a_j, o_k)) )

with S(u, v) = exp(cos(u, v) / tau), averaged over the M anchors. The
inter-modal loss uses image codes as anchors and text codes as the other
view; the intra-modal losses use a modality's codes against their augmented
counterparts with one shared scalar weight.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError

NORM_EPS = 1e-12


def cosine_sim(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0:
        raise NumericError("cosine similarity of a zero vector (argument 0)")
    if nv == 0.0:
        raise NumericError("cosine similarity of a zero vector (argument 1)")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def sim_exp(u, v, tau):
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    return float(np.exp(cosine_sim(u, v) / tau))


def _normalize_rows(h):
    n = np.sqrt((h * h).sum(axis=1, keepdims=True) + NORM_EPS ** 2)
    return h / n, n


def _normalize_rows_backward(g_u, u, n):
    return (g_u - u * (g_u * u).sum(axis=1, keepdims=True)) / n


def ntxent(anchor, other, weights, tau):
    """Weighted contrastive loss with gradients.

    Returns ``(loss, d_anchor, d_other)``; ``weights`` has one entry per anchor.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    if anchor.shape != other.shape or anchor.ndim != 2:
        raise ConfigError(f"code matrices must share an M x B shape, got {anchor.shape} and {other.shape}")
    m = anchor.shape[0]
    if m < 2:
        raise ConfigError("contrastive losses need a batch of at least 2")
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), (m,))

    u, nu = _normalize_rows(anchor)
    v, nv = _normalize_rows(other)
    same = np.exp(u @ u.T / tau)
    np.fill_diagonal(same, 0.0)
    cross_logits = u @ v.T / tau
    cross = np.exp(cross_logits)
    denom = same.sum(axis=1) + cross.sum(axis=1)
    per_anchor = w * (np.log(denom) - np.diag(cross_logits))
    loss = per_anchor.sum() / m
    if not np.isfinite(loss):
        raise NumericError("non-finite contrastive loss")

    scale = (w / (m * denom))[:, None]
    g_same = scale * same
    g_cross = scale * cross
    g_cross[np.diag_indices(m)] -= w / m
    g_u = ((g_same + g_same.T) @ u + g_cross @ v) / tau
    g_v = (g_cross.T @ u) / tau
    return loss, _normalize_rows_backward(g_u, u, nu), _normalize_rows_backward(g_v, v, nv)


def inter_modal_loss(h_img, h_txt, w, tau):
    """Image-anchored cross-modal loss; pair j is weighted by ``w[j]``."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (np.shape(h_img)[0],):
        raise ConfigError("need one weight per pair")
    return ntxent(h_img, h_txt, w, tau)


def intra_modal_loss(h, h_aug, w_hat, tau):
    """Original-vs-augmented loss within one modality, scaled by scalar ``w_hat``."""
    return ntxent(h, h_aug, float(w_hat), tau)


def average_weight(w):
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ConfigError("cannot average an empty weight vector")
    return float(w.mean())


def total_contrastive_loss(inter, img, txt, lambda1=1.0, lambda2=1.0):
    return inter + lambda1 * img + lambda2 * txt


def quantization_loss(b, h_img, h_img_aug, h_txt, h_txt_aug):
    """Sum of squared Frobenius distances from each code matrix to ``b``.

    ``b`` is a constant; returns ``(loss, [grad for each H in argument order])``.
    """
    hs = [np.asarray(h, dtype=np.float64) for h in (h_img, h_img_aug, h_txt, h_txt_aug)]
    b = np.asarray(b, dtype=np.float64)
    for h in hs:
        if h.shape != b.shape:
            raise ConfigError(f"code shape {h.shape} does not match binary code shape {b.shape}")
    diffs = [h - b for h in hs]
    loss = float(sum((d * d).sum() for d in diffs))
    return loss, [2.0 * d for d in diffs]


def sign_pm1(x):
    """Elementwise sign mapped to {-1, +1} with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def update_binary_code(h_img, h_img_aug, h_txt, h_txt_aug):
    shapes = {np.shape(h) for h in (h_img, h_img_aug, h_txt, h_txt_aug)}
    if len(shapes) != 1:
        raise ConfigError(f"code matrices disagree in shape: {sorted(shapes)}")
    mean = 0.5 * ((np.asarray(h_img) + h_img_aug) / 2.0 + (np.asarray(h_txt) + h_txt_aug) / 2.0)
    return sign_pm1(mean)


def total_loss(contrastive, quantization, alpha):
    if alpha < 0:
        raise ConfigError("alpha must be non-negative")
    return contrastive + alpha * quantization
