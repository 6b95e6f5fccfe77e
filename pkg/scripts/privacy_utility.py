#!/usr/bin/env python3
"""Accuracy of P4 against the random-grouping ablation, local training and FedAvg.

All methods share one set of hyperparameters (the preset).  ``--tune-local``
adds a row where only the local baseline gets its own best step size, which
is the harder comparison.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from p4sim.harness import apply_overrides, load_config, random_grouping_ablation, run_experiment
from p4sim.harness.config import ExperimentConfig

LOCAL_GRID = (0.001, 0.003, 0.005, 0.01, 0.03, 0.1)


def summarize(name, results):
    acc = np.array([r.mean_acc_theta for r in results]) * 100
    return {"method": name, "mean": float(acc.mean()), "std": float(acc.std()),
            "per_seed": " ".join(f"{a:.2f}" for a in acc)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/desk.yaml")
    ap.add_argument("--epsilons", default="15", help="comma-separated privacy budgets")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--tune-local", action="store_true")
    ap.add_argument("--out", default="results/privacy_utility")
    args = ap.parse_args(argv)

    base = load_config(args.config) if args.config else ExperimentConfig()
    base = apply_overrides(base, args.set) if args.set else base
    rows = []
    for eps in [float(e) for e in args.epsilons.split(",")]:
        cfg = apply_overrides(base, [f"privacy.epsilon={eps}"])
        found = [summarize("p4", run_experiment(cfg)),
                 summarize("random_grouping", random_grouping_ablation(cfg)),
                 summarize("local", run_experiment(apply_overrides(cfg, ["baseline=local"]))),
                 summarize("fedavg", run_experiment(apply_overrides(cfg, ["baseline=fedavg"])))]
        if args.tune_local:
            best = max((summarize(f"local_tuned(eta0={e})",
                                  run_experiment(apply_overrides(cfg, ["baseline=local", f"train.eta0={e}"])))
                        for e in LOCAL_GRID), key=lambda r: r["mean"])
            found.append(best)
        for r in found:
            r["epsilon"] = eps
        rows += found

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epsilon", "method", "mean", "std", "per_seed"])
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"eps={r['epsilon']:<5g} {r['method']:<24} {r['mean']:6.2f} +- {r['std']:.2f}")
    print(f"table written to {out / 'table.csv'}")


if __name__ == "__main__":
    main()
