"""``p4sim`` command line.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import data
from ..privacy import calibrate_sigma
from . import experiment
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .results import emit_results

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seed: expected comma-separated integers, got {text!r}")
    if not seeds or min(seeds) < 0:
        raise ConfigError("--seed: expected non-negative integers")
    return seeds


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = list(args.set or [])
    if args.seed:
        overrides.append(f"seeds={_seed_list(args.seed)}")
    if getattr(args, "baseline", None):
        overrides.append(f"baseline={args.baseline}")
    if args.out:
        overrides.append(f"out={args.out}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def _add_common(p):
    p.add_argument("--config", help="YAML experiment config (defaults: desk preset)")
    p.add_argument("--seed", help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. --set privacy.epsilon=5")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="p4sim", description="Private peer-to-peer group learning simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write results")
    _add_common(run)
    run.add_argument("--baseline", choices=("p4", "fedavg", "local", "random_grouping"))

    abl = sub.add_parser("ablate-random-grouping", help="same pipeline with random groups")
    _add_common(abl)

    sep = sub.add_parser("separation", help="phase-1 grouping diagnostic only")
    _add_common(sep)

    cal = sub.add_parser("calibrate", help="print the noise multiplier for a privacy budget")
    cal.add_argument("--epsilon", type=float, required=True)
    cal.add_argument("--delta", type=float, required=True)
    cal.add_argument("--s", type=float, default=1.0)
    cal.add_argument("--l", type=float, default=1.0)
    cal.add_argument("--T", type=int, default=50)
    cal.add_argument("--K", type=int, default=1)
    cal.add_argument("--m-prime", type=int, default=1)
    cal.add_argument("--calib-const", type=float, default=1.0)

    ds = sub.add_parser("dataset", help="write or inspect binary feature files")
    dsub = ds.add_subparsers(dest="action", required=True)
    w = dsub.add_parser("write", help="write a synthetic pool to a feature file")
    w.add_argument("path")
    w.add_argument("--classes", type=int, default=10)
    w.add_argument("--dim", type=int, default=32)
    w.add_argument("--separation", type=float, default=4.0)
    w.add_argument("--n-per-class", type=int, default=600)
    w.add_argument("--seed", type=int, default=0)
    i = dsub.add_parser("inspect", help="print a feature file's header and class counts")
    i.add_argument("path")
    return ap


def _cmd_run(args, ablate=False) -> int:
    cfg = resolve_config(args)
    runner = experiment.random_grouping_ablation if ablate else experiment.run_experiment
    results = runner(cfg)
    emit_results(results, cfg.out, cfg.resolved())
    failed = [r for r in results if r.error]
    for r in results:
        if r.error:
            print(f"seed {r.seed}: FAILED {r.error}", file=sys.stderr)
        else:
            line = f"seed {r.seed}: {r.baseline} theta {r.mean_acc_theta:.4f} phi {r.mean_acc_phi:.4f}"
            if r.ideal_delta is not None:
                line += f" impact {r.attack_impact:.2f} ideal_delta {r.ideal_delta:.2f}"
            print(line)
    print(f"results written to {cfg.out}")
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_separation(args) -> int:
    cfg = resolve_config(args)
    out = experiment.run_separation(cfg)
    text = json.dumps({"config": cfg.resolved(), "seeds": out}, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "separation.json").write_text(text + "\n")
    for row in out:
        ratio = row["separation"]["ratio"] if row["separation"] else float("nan")
        print(f"seed {row['seed']}: ratio {ratio:.3f} groups {row['groups']}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    sigma = calibrate_sigma(args.epsilon, args.delta, args.s, args.l, args.T, args.K,
                            args.m_prime, args.calib_const)
    print(f"{sigma:.6f}")
    return EXIT_OK


def _cmd_dataset(args) -> int:
    if args.action == "write":
        pool = data.gen_synthetic(args.classes, args.dim, args.separation, args.n_per_class, args.seed)
        data.write_feature_file(args.path, pool)
        print(f"wrote {len(pool)} samples to {args.path}")
        return EXIT_OK
    pool = data.load_feature_file(args.path)
    counts = np.bincount(pool.labels, minlength=pool.num_classes)
    print(json.dumps({"n": len(pool), "dim": pool.dim, "num_classes": pool.num_classes,
                      "class_counts": counts.tolist()}))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "ablate-random-grouping":
            return _cmd_run(args, ablate=True)
        if args.command == "separation":
            return _cmd_separation(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        return _cmd_dataset(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except data.FeatureFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
