"""
Experiment specs, dataset preparation, sweeps and result summaries.

Configs are INI files with one section per component::

    [datagen]    source, synthetic generator settings, split, clean_fraction,
                 augmentation strengths
    [nn]         optimizer settings and hash-net widths
    [detector]   discriminator widths and learning rate
    [hashing]    code length, loss weights, batch size, epochs, variant flags
    [retrieval]  k
    [experiment] noise_rates, variants, seeds

Every key is optional; omitted keys take the defaults of ``SynthConfig`` and
``TrainingConfig``. ``configs/default.ini`` lists every key.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datagen, featio, nn, retrieval
from .errors import ConfigError, DataError
from .training import VARIANTS, TrainingConfig, run_training

log = logging.getLogger(__name__)

DEFAULT_NOISE_RATES = (0.05, 0.10, 0.20, 0.30, 0.40, 0.50)

# (section, key, TrainingConfig field)
_TRAINING_KEYS = [
    ("datagen", "clean_fraction", "clean_fraction"),
    ("datagen", "aug_sigma_img", "aug_sigma_img"),
    ("datagen", "aug_drop_img", "aug_drop_img"),
    ("datagen", "aug_sigma_txt", "aug_sigma_txt"),
    ("datagen", "aug_drop_txt", "aug_drop_txt"),
    ("nn", "lr_hash", "lr_hash"),
    ("nn", "beta1", "beta1"),
    ("nn", "beta2", "beta2"),
    ("nn", "adam_eps", "adam_eps"),
    ("nn", "hash_hidden", "hash_hidden"),
    ("detector", "lr_disc", "lr_disc"),
    ("detector", "disc_hidden", "disc_hidden"),
    ("hashing", "code_length", "code_length"),
    ("hashing", "tau", "tau"),
    ("hashing", "lambda1", "lambda1"),
    ("hashing", "lambda2", "lambda2"),
    ("hashing", "alpha", "alpha"),
    ("hashing", "batch_size", "batch_size"),
    ("hashing", "meta_epochs", "meta_epochs"),
    ("hashing", "main_epochs", "main_epochs"),
    ("hashing", "variant", "variant"),
    ("hashing", "noise_rate", "noise_rate"),
    ("hashing", "inter_on_augmented", "inter_on_augmented"),
    ("hashing", "symmetric_inter", "symmetric_inter"),
]
_SYNTH_KEYS = ["num_classes", "samples_per_class", "d_i", "d_t", "sigma_class", "centroid_scale"]
_KNOWN = {
    "datagen": {"source", "split", *_SYNTH_KEYS},
    "retrieval": {"k"},
    "experiment": {"noise_rates", "variants", "seeds"},
}
for _sec, _key, _ in _TRAINING_KEYS:
    _KNOWN.setdefault(_sec, set()).add(_key)


@dataclass
class ExperimentSpec:
    source: str = "synthetic"
    synth: datagen.SynthConfig = field(default_factory=datagen.SynthConfig)
    split: tuple = (0.8, 0.1, 0.1)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    noise_rates: tuple = DEFAULT_NOISE_RATES
    variants: tuple = VARIANTS
    seeds: tuple = (0,)
    k: int = 20

    def validate(self):
        if not self.noise_rates or not self.variants or not self.seeds:
            raise ConfigError("experiment.noise_rates, variants and seeds must be non-empty")
        for r in self.noise_rates:
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"experiment.noise_rates: {r} is outside [0, 1]")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"experiment.variants: unknown variant {v!r}")
        if self.k < 1:
            raise ConfigError("retrieval.k must be at least 1")
        if self.source == "synthetic":
            self.synth.validate()
        self.training.validate()
        return self

    def to_ini(self):
        """Fully resolved config text; parsing it gives back an equal spec."""
        cp = configparser.ConfigParser()
        t = self.training
        cp["datagen"] = {"source": self.source, "split": _fmt(self.split)}
        for key in _SYNTH_KEYS:
            cp["datagen"][key] = _fmt(getattr(self.synth, key))
        for sec in ("nn", "detector", "hashing"):
            cp[sec] = {}
        for sec, key, attr in _TRAINING_KEYS:
            cp[sec][key] = _fmt(getattr(t, attr))
        cp["retrieval"] = {"k": str(self.k)}
        cp["experiment"] = {
            "noise_rates": _fmt(self.noise_rates),
            "variants": ", ".join(self.variants),
            "seeds": _fmt(self.seeds),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(value):
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(section, key, raw, like):
    where = f"{section}.{key}"
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "yes", "1", "on")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_spec(text, source_name="<config>"):
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=source_name)
    except configparser.Error as exc:
        raise ConfigError(f"{source_name}: {exc}") from None
    for sec in cp.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"{source_name}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in _KNOWN[sec]:
                raise ConfigError(f"{source_name}: unknown key {sec}.{key}")

    spec = ExperimentSpec()
    t = spec.training
    changes = {}
    for sec, key, attr in _TRAINING_KEYS:
        if cp.has_option(sec, key):
            changes[attr] = _parse_value(sec, key, cp[sec][key], getattr(t, attr))
    training = replace(t, **changes)

    synth_changes = {}
    for key in _SYNTH_KEYS:
        if cp.has_option("datagen", key):
            synth_changes[key] = _parse_value("datagen", key, cp["datagen"][key], getattr(spec.synth, key))
    synth = replace(spec.synth, **synth_changes)

    def floats(sec, key, default):
        if not cp.has_option(sec, key):
            return default
        try:
            return tuple(float(v) for v in cp[sec][key].split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"{sec}.{key}: {exc}") from None

    split = floats("datagen", "split", spec.split)
    if len(split) != 3:
        raise ConfigError("datagen.split needs three ratios")
    seeds = spec.seeds
    if cp.has_option("experiment", "seeds"):
        seeds = _parse_value("experiment", "seeds", cp["experiment"]["seeds"], ())
    variants = spec.variants
    if cp.has_option("experiment", "variants"):
        variants = tuple(v.strip() for v in cp["experiment"]["variants"].split(",") if v.strip())
    k = spec.k
    if cp.has_option("retrieval", "k"):
        k = _parse_value("retrieval", "k", cp["retrieval"]["k"], 0)
    source = cp.get("datagen", "source", fallback="synthetic").strip()

    spec = ExperimentSpec(
        source=source, synth=synth, split=split, training=training,
        noise_rates=floats("experiment", "noise_rates", spec.noise_rates),
        variants=variants, seeds=seeds, k=k,
    )
    return spec.validate()


def load_spec(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_spec(text, str(path))


def load_source(spec, seed):
    if spec.source == "synthetic":
        return datagen.generate_synthetic(replace(spec.synth, seed=seed))
    path = Path(spec.source)
    if path.suffix.lower() == ".csv":
        return featio.import_csv(path)
    return featio.load_features(path)


def prepare_dataset(ds, split_ratios, clean_fraction, noise_rate, seed):
    """Split, mark the clean subset and inject noise, skipping steps already done.

    A dataset that already carries injected noise must match ``noise_rate``.
    """
    if not (np.any(ds.split == datagen.QUERY) and np.any(ds.split == datagen.RETRIEVAL)):
        ds = datagen.split(ds, split_ratios, seed)
    if np.any(ds.noisy):
        expected = datagen.noisy_count(noise_rate, ds.train_size)
        if int(ds.noisy.sum()) != expected:
            raise ConfigError(
                f"dataset already holds {int(ds.noisy.sum())} noisy records, noise_rate {noise_rate} implies {expected}")
        return ds
    if not np.any(ds.clean):
        ds = datagen.select_clean_subset(ds, clean_fraction, seed)
    return datagen.inject_noise(ds, noise_rate, seed)


def run_single(spec, seed, noise_rate, variant):
    """Prepare, train and evaluate one configuration.

    Returns ``(reports, f, g, dn, training_log, dataset)``.
    """
    ds = load_source(spec, seed)
    cfg = replace(spec.training, seed=seed, noise_rate=noise_rate, variant=variant)
    ds = prepare_dataset(ds, spec.split, cfg.clean_fraction, noise_rate, seed)
    f, g, dn, train_log = run_training(cfg, ds)
    reports = retrieval.evaluate(f, g, ds, spec.k, variant, noise_rate, seed)
    return reports, f, g, dn, train_log, ds


def run_dir_name(variant, noise_rate, seed):
    return f"{variant}_rate{noise_rate:g}_seed{seed}"


def save_models(out_dir, f, g, dn):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nn.save_net(f, out_dir / "f.npz")
    nn.save_net(g, out_dir / "g.npz")
    if dn is not None:
        nn.save_net(dn, out_dir / "dn.npz")


def load_models(model_dir):
    model_dir = Path(model_dir)
    try:
        f = nn.load_net(model_dir / "f.npz")
        g = nn.load_net(model_dir / "g.npz")
    except OSError as exc:
        raise DataError(f"cannot load networks from {model_dir}: {exc}") from None
    dn = nn.load_net(model_dir / "dn.npz") if (model_dir / "dn.npz").exists() else None
    return f, g, dn


def write_reports(path, reports, append=False):
    path = Path(path)
    new = not append or not path.exists()
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=retrieval.REPORT_FIELDS, lineterminator="\n")
        if new:
            writer.writeheader()
        for r in reports:
            writer.writerow(r.csv_row())


def _row_key(row):
    return (row["variant"], float(row["noise_rate"]), int(row["seed"]))


def read_results(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != retrieval.REPORT_FIELDS:
            raise DataError(f"{path}: header {reader.fieldnames} does not match {list(retrieval.REPORT_FIELDS)}")
        rows = list(reader)
    for i, row in enumerate(rows, start=2):
        try:
            _row_key(row)
            float(row["map_at_k"])
            float(row["precision_at_k"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {i}: {exc}") from None
    return rows


def sweep(spec, out_dir, force=False):
    """Run every (seed, noise rate, variant) combination into ``out_dir``.

    Completed combinations already present in ``results.csv`` are skipped. A
    directory holding results for a different config is refused unless
    ``force`` is set, in which case it is cleared first. Returns the number
    of runs executed.
    """
    out_dir = Path(out_dir)
    config_path = out_dir / "config.ini"
    results = out_dir / "results.csv"
    resolved = spec.to_ini()
    if out_dir.exists() and force:
        for p in (config_path, results):
            p.unlink(missing_ok=True)
        shutil.rmtree(out_dir / "runs", ignore_errors=True)
    if config_path.exists() and config_path.read_text() != resolved:
        raise ConfigError(f"{out_dir} holds results for a different config; use --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path.write_text(resolved)

    done = set()
    if results.exists():
        rows = read_results(results)
        tasks = {}
        for row in rows:
            tasks.setdefault(_row_key(row), set()).add(row["task"])
        done = {key for key, t in tasks.items() if t == set(retrieval.TASKS)}
        kept = [r for r in rows if _row_key(r) in done]
        if len(kept) != len(rows):
            # drop half-written runs so they are redone cleanly
            with open(results, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=retrieval.REPORT_FIELDS, lineterminator="\n")
                writer.writeheader()
                writer.writerows(kept)

    executed = 0
    for seed in spec.seeds:
        for rate in spec.noise_rates:
            for variant in spec.variants:
                if (variant, float(rate), int(seed)) in done:
                    continue
                log.info("run variant=%s noise_rate=%g seed=%d", variant, rate, seed)
                reports, _, _, _, train_log, _ = run_single(spec, seed, rate, variant)
                run_dir = out_dir / "runs" / run_dir_name(variant, rate, seed)
                run_dir.mkdir(parents=True, exist_ok=True)
                train_log.write_csv(run_dir / "train_log.csv")
                write_reports(results, reports, append=True)
                executed += 1
    return executed


def summarize(rows):
    """Seed-averaged mAP table per direction plus CHNR >= CHNR-WNR flags.

    Returns ``(text, cells, flags)``: ``cells[(task, variant, rate)]`` is
    ``(mean, sample_std_or_None, n)`` and ``flags[(task, rate)]`` is a bool.
    """
    if not rows:
        raise DataError("no result rows to summarize")
    groups = {}
    for row in rows:
        key = (row["task"], row["variant"], float(row["noise_rate"]))
        groups.setdefault(key, []).append(float(row["map_at_k"]))
    cells = {}
    for key, vals in groups.items():
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
        cells[key] = (float(np.mean(vals)), std, len(vals))

    order = {v: i for i, v in enumerate(VARIANTS)}
    tasks = [t for t in retrieval.TASKS if any(k[0] == t for k in cells)]
    lines, flags = [], {}
    for task in tasks:
        rates = sorted({k[2] for k in cells if k[0] == task})
        variants = sorted({k[1] for k in cells if k[0] == task}, key=lambda v: (order.get(v, 99), v))
        k_label = rows[0]["K"]
        lines.append(f"{'I -> T' if task == 'I2T' else 'T -> I'}  mAP@{k_label}")
        header = f"{'method':<10}" + "".join(f"{f'{r * 100:g}%':>18}" for r in rates)
        lines.append(header)
        for v in variants:
            cols = []
            for r in rates:
                cell = cells.get((task, v, r))
                if cell is None:
                    cols.append(f"{'-':>18}")
                elif cell[1] is None:
                    cols.append(f"{cell[0]:>18.3f}")
                else:
                    cols.append(f"{f'{cell[0]:.3f} ± {cell[1]:.3f}':>18}")
            lines.append(f"{v:<10}" + "".join(cols))
        for r in rates:
            a, b = cells.get((task, "CHNR", r)), cells.get((task, "CHNR-WNR", r))
            if a is not None and b is not None:
                flags[(task, r)] = a[0] >= b[0]
        if any(k[0] == task for k in flags):
            marks = "".join(f"{('yes' if flags[(task, r)] else 'NO') if (task, r) in flags else '-':>18}"
                            for r in rates)
            lines.append(f"{'CHNR>=WNR':<10}" + marks)
        lines.append("")
    return "\n".join(lines), cells, flags
