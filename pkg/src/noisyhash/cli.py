"""Command line entry point: ``noisyhash {gen,train,sweep,eval,summarize}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datagen, experiment, featio, retrieval
from .errors import ConfigError, NoisyHashError

log = logging.getLogger("noisyhash")


def _spec(args):
    spec = experiment.load_spec(args.config) if args.config else experiment.ExperimentSpec()
    return spec.validate()


def _out_dir(args, force_check=True):
    out = Path(args.out)
    if force_check and out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args):
    spec = _spec(args)
    if spec.source != "synthetic":
        raise ConfigError("datagen.source must be 'synthetic' for gen")
    ds = datagen.generate_synthetic(replace(spec.synth, seed=args.seed))
    if args.noise_rate is not None:
        ds = experiment.prepare_dataset(ds, spec.split, spec.training.clean_fraction, args.noise_rate, args.seed)
    out = _out_dir(args)
    featio.save_features(ds, out / "features.cmrf")
    print(f"wrote {len(ds)} records (d_i={ds.d_i}, d_t={ds.d_t}) to {out / 'features.cmrf'}")


def _single_cfg(args, spec):
    variant = args.variant or spec.training.variant
    rate = spec.training.noise_rate if args.noise_rate is None else args.noise_rate
    return variant, rate


def cmd_train(args):
    spec = _spec(args)
    variant, rate = _single_cfg(args, spec)
    out = _out_dir(args)
    (out / "config.ini").write_text(spec.to_ini())
    reports, f, g, dn, train_log, _ = experiment.run_single(spec, args.seed, rate, variant)
    experiment.save_models(out, f, g, dn)
    train_log.write_csv(out / "train_log.csv")
    experiment.write_reports(out / "reports.csv", reports)
    for r in reports:
        print(f"{r.task} mAP@{r.k}={r.map_at_k:.4f} P@{r.k}={r.precision_at_k:.4f}")


def cmd_eval(args):
    spec = _spec(args)
    variant, rate = _single_cfg(args, spec)
    f, g, _ = experiment.load_models(args.models)
    ds = experiment.load_source(spec, args.seed)
    ds = experiment.prepare_dataset(ds, spec.split, spec.training.clean_fraction, rate, args.seed)
    reports = retrieval.evaluate(f, g, ds, spec.k, variant, rate, args.seed)
    out = _out_dir(args, force_check=False)
    path = out / "reports.csv"
    if path.exists() and not args.force:
        raise ConfigError(f"{path} exists; use --force to overwrite")
    experiment.write_reports(path, reports)
    for r in reports:
        print(f"{r.task} mAP@{r.k}={r.map_at_k:.4f} P@{r.k}={r.precision_at_k:.4f}")


def cmd_sweep(args):
    spec = _spec(args)
    if args.seed is not None:
        spec = replace(spec, seeds=(args.seed,))
    ran = experiment.sweep(spec, args.out, force=args.force)
    print(f"{ran} runs executed; results in {Path(args.out) / 'results.csv'}")


def cmd_summarize(args):
    rows = experiment.read_results(args.results)
    text, _, flags = experiment.summarize(rows)
    print(text)
    if args.json:
        out = {f"{task}@{rate:g}": ok for (task, rate), ok in flags.items()}
        print(json.dumps(out, sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="noisyhash", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--config", type=Path, help="INI config file")
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("gen", help="write a synthetic dataset to a feature file")
    common(sp)
    sp.add_argument("--noise-rate", type=float, default=None,
                    help="also split, select the clean subset and inject noise at this rate")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train and evaluate a single configuration")
    common(sp)
    sp.add_argument("--variant", choices=("CHNR", "CHNR-NW", "CHNR-PTC", "CHNR-WNR"))
    sp.add_argument("--noise-rate", type=float, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate saved networks")
    common(sp)
    sp.add_argument("--models", type=Path, required=True, help="directory with f.npz and g.npz")
    sp.add_argument("--variant", choices=("CHNR", "CHNR-NW", "CHNR-PTC", "CHNR-WNR"))
    sp.add_argument("--noise-rate", type=float, default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="run the seed x noise rate x variant grid")
    common(sp, seed_default=None)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("summarize", help="pivot a results CSV into tables")
    sp.add_argument("results", type=Path)
    sp.add_argument("--json", action="store_true", help="also print the trend flags as JSON")
    sp.set_defaults(func=cmd_summarize)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            args.func(args)
    except NoisyHashError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
