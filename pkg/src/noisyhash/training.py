"""
Two-phase training of the hashing networks.

The meta phase runs on the clean subset only: every pair has weight 1 and,
for the variants that use it, the discriminator is trained alongside the
hashing nets. The main phase runs on the whole (noisy) train split with the
discriminator frozen; its scores become per-pair weights.

Variants:

    CHNR      meta phase, thresholded discriminator weights
    CHNR-NW   meta phase, continuous discriminator weights
    CHNR-PTC  meta phase without discriminator, unit weights
    CHNR-WNR  no meta phase; all epochs on the noisy split, unit weights
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import detector, losses, nn
from .datagen import AugmentConfig, make_batches
from .errors import ConfigError

log = logging.getLogger(__name__)

VARIANTS = ("CHNR", "CHNR-NW", "CHNR-PTC", "CHNR-WNR")
LOG_FIELDS = ("phase", "epoch", "l_inter", "l_img", "l_txt", "l_q", "l_total", "mean_w", "frac_wd")


@dataclass
class TrainingConfig:
    code_length: int = 64
    tau: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    alpha: float = 0.01
    batch_size: int = 128
    meta_epochs: int = 75
    main_epochs: int = 75
    noise_rate: float = 0.0
    clean_fraction: float = 0.2
    variant: str = "CHNR"
    inter_on_augmented: bool = True
    symmetric_inter: bool = False
    lr_hash: float = 1e-4
    lr_disc: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hash_hidden: tuple = (512, 128)
    disc_hidden: tuple = (512, 256, 128, 64)
    aug_sigma_img: float = 0.1
    aug_drop_img: float = 0.1
    aug_sigma_txt: float = 0.1
    aug_drop_txt: float = 0.1
    seed: int = 0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        if self.code_length < 1:
            raise ConfigError("code_length must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        for name in ("lambda1", "lambda2", "alpha"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.meta_epochs < 0 or self.main_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError("noise_rate must lie in [0, 1]")
        if not 0.0 < self.clean_fraction < 1.0:
            raise ConfigError("clean_fraction must lie in (0, 1)")
        if self.lr_hash <= 0 or self.lr_disc <= 0:
            raise ConfigError("learning rates must be positive")
        if len(self.hash_hidden) != 2:
            raise ConfigError("hash_hidden needs exactly two widths")
        if len(self.disc_hidden) != 4:
            raise ConfigError("disc_hidden needs exactly four widths")
        return self

    @property
    def uses_meta_phase(self):
        return self.variant != "CHNR-WNR"

    @property
    def uses_discriminator(self):
        return self.variant in ("CHNR", "CHNR-NW")

    @property
    def aug_image(self):
        return AugmentConfig(self.aug_sigma_img, self.aug_drop_img)

    @property
    def aug_text(self):
        return AugmentConfig(self.aug_sigma_txt, self.aug_drop_txt)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class HashModel:
    f: nn.DenseNet
    g: nn.DenseNet
    opt_f: nn.OptimizerState
    opt_g: nn.OptimizerState


def init_models(cfg, d_i, d_t):
    """Fresh hashing nets, discriminator and their optimizer states."""
    f = nn.hash_net(d_i, cfg.code_length, tuple(cfg.hash_hidden), seed=[cfg.seed, 1])
    g = nn.hash_net(d_t, cfg.code_length, tuple(cfg.hash_hidden), seed=[cfg.seed, 2])
    opt = dict(lr=cfg.lr_hash, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    model = HashModel(f, g, nn.adam_init(f, **opt), nn.adam_init(g, **opt))
    dn, dn_opt = None, None
    if cfg.uses_discriminator:
        dn = nn.discriminator_net(d_i + d_t, tuple(cfg.disc_hidden), seed=[cfg.seed, 3])
        dn_opt = nn.adam_init(dn, lr=cfg.lr_disc, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    return model, dn, dn_opt


def pair_weights(cfg, phase, dn, x, y):
    """Weights of the batch pairs plus the thresholded form (for logging)."""
    m = len(x)
    if phase == "meta" or cfg.variant in ("CHNR-PTC", "CHNR-WNR"):
        ones = np.ones(m)
        return ones, ones
    if dn is None:
        raise ConfigError(f"variant {cfg.variant} needs a trained discriminator in the main phase")
    w = detector.assign_weights(dn, detector.concat_joint(x, y))
    wd = detector.threshold_weights(w)
    return (wd if cfg.variant == "CHNR" else w), wd


def batch_objective(cfg, h_i, h_ia, h_t, h_ta, w, w_aug, w_hat):
    """Full loss for one batch of codes.

    Returns ``(parts, grads)`` where ``grads`` are w.r.t. the four code matrices.
    """
    tau = cfg.tau
    l_inter, gi, gt = losses.inter_modal_loss(h_i, h_t, w, tau)
    gia = np.zeros_like(h_ia)
    gta = np.zeros_like(h_ta)
    if cfg.symmetric_inter:
        l2, gt2, gi2 = losses.inter_modal_loss(h_t, h_i, w, tau)
        l_inter, gi, gt = l_inter + l2, gi + gi2, gt + gt2
    if cfg.inter_on_augmented:
        la, gia, gta = losses.inter_modal_loss(h_ia, h_ta, w_aug, tau)
        if cfg.symmetric_inter:
            l2, gta2, gia2 = losses.inter_modal_loss(h_ta, h_ia, w_aug, tau)
            la, gia, gta = la + l2, gia + gia2, gta + gta2
        l_inter = 0.5 * (l_inter + la)
        gi, gt, gia, gta = 0.5 * gi, 0.5 * gt, 0.5 * gia, 0.5 * gta

    l_img, gi_img, gia_img = losses.intra_modal_loss(h_i, h_ia, w_hat, tau)
    l_txt, gt_txt, gta_txt = losses.intra_modal_loss(h_t, h_ta, w_hat, tau)
    l_c = losses.total_contrastive_loss(l_inter, l_img, l_txt, cfg.lambda1, cfg.lambda2)

    b = losses.update_binary_code(h_i, h_ia, h_t, h_ta)
    l_q, (qi, qia, qt, qta) = losses.quantization_loss(b, h_i, h_ia, h_t, h_ta)
    total = losses.total_loss(l_c, l_q, cfg.alpha)

    a = cfg.alpha
    grads = (
        gi + cfg.lambda1 * gi_img + a * qi,
        gia + cfg.lambda1 * gia_img + a * qia,
        gt + cfg.lambda2 * gt_txt + a * qt,
        gta + cfg.lambda2 * gta_txt + a * qta,
    )
    parts = {"l_inter": l_inter, "l_img": l_img, "l_txt": l_txt, "l_q": l_q, "l_total": total}
    return parts, grads


def train_step(batch, model, cfg, dn=None, phase="main"):
    """One optimizer step of both hashing nets on ``batch``. Returns a log dict."""
    if phase not in ("meta", "main"):
        raise ConfigError(f"phase must be 'meta' or 'main', got {phase!r}")
    f, g = model.f, model.g
    h_i, c_i = nn.forward(f, batch.x, "train")
    h_ia, c_ia = nn.forward(f, batch.x_aug, "train")
    h_t, c_t = nn.forward(g, batch.y, "train")
    h_ta, c_ta = nn.forward(g, batch.y_aug, "train")

    w, wd = pair_weights(cfg, phase, dn, batch.x, batch.y)
    w_aug = w
    if cfg.inter_on_augmented:
        w_aug, _ = pair_weights(cfg, phase, dn, batch.x_aug, batch.y_aug)
    w_hat = 1.0 if phase == "meta" else losses.average_weight(w)

    parts, (gi, gia, gt, gta) = batch_objective(cfg, h_i, h_ia, h_t, h_ta, w, w_aug, w_hat)

    grads_f = nn.add_grads(nn.backward(f, c_i, gi)[0], nn.backward(f, c_ia, gia)[0])
    grads_g = nn.add_grads(nn.backward(g, c_t, gt)[0], nn.backward(g, c_ta, gta)[0])
    nn.adam_step(f, grads_f, model.opt_f)
    nn.adam_step(g, grads_g, model.opt_g)

    parts["mean_w"] = float(np.mean(w))
    parts["frac_wd"] = float(np.mean(wd))
    return parts


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    disc_losses: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            writer.writeheader()
            for row in self.epochs:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _epoch_record(phase, epoch, steps):
    rec = {"phase": phase, "epoch": epoch}
    for key in LOG_FIELDS[2:]:
        rec[key] = float(np.mean([s[key] for s in steps]))
    return rec


def run_training(cfg, ds):
    """Train per ``cfg`` on a prepared dataset. Returns ``(f, g, dn, TrainingLog)``."""
    cfg.validate()
    model, dn, dn_opt = init_models(cfg, ds.d_i, ds.d_t)
    train_log = TrainingLog()

    def batches(phase, epoch):
        return make_batches(ds, cfg.batch_size, phase, cfg.seed, epoch, cfg.aug_image, cfg.aug_text)

    if cfg.uses_meta_phase:
        for epoch in range(cfg.meta_epochs):
            rng = np.random.default_rng([cfg.seed, 21, epoch])
            steps, d_losses = [], []
            for batch in batches("meta", epoch):
                if dn is not None:
                    d_losses.append(detector.discriminator_step(dn, dn_opt, batch, rng))
                steps.append(train_step(batch, model, cfg, phase="meta"))
            train_log.epochs.append(_epoch_record("meta", epoch, steps))
            if d_losses:
                train_log.disc_losses.append(float(np.mean(d_losses)))
            log.debug("meta epoch %d: %s", epoch, train_log.epochs[-1])
        main_epochs = cfg.main_epochs
    else:
        main_epochs = cfg.meta_epochs + cfg.main_epochs

    for epoch in range(main_epochs):
        steps = [train_step(b, model, cfg, dn, "main") for b in batches("main", epoch)]
        train_log.epochs.append(_epoch_record("main", epoch, steps))
        log.debug("main epoch %d: %s", epoch, train_log.epochs[-1])
    return model.f, model.g, dn, train_log
