"""results.json / results.csv / timings.json writers."""
from __future__ import annotations

import csv
import json
from pathlib import Path

SCHEMA_VERSION = 1
CSV_HEADER = ["seed", "round", "mean_acc_theta", "mean_acc_phi", "filtered_count"]


def results_payload(results, resolved_config: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": resolved_config,
        "results": [r.to_dict() for r in results],
    }


def csv_rows(results):
    for r in results:
        for t, (a, b) in enumerate(zip(r.acc_theta_series, r.acc_phi_series)):
            yield [r.seed, t, a, b, r.filtered_series[t] if t < len(r.filtered_series) else 0]


def emit_results(results, path, resolved_config: dict | None = None) -> dict:
    """Write the three files into directory ``path``; returns their locations.

    Wall-clock timings live in timings.json so results.json stays reproducible.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {k: out / f"{k}.{ext}" for k, ext in
                 (("results", "json"), ("table", "csv"), ("timings", "json"))}
        files["table"] = out / "results.csv"
        with open(files["results"], "w") as fh:
            json.dump(results_payload(results, resolved_config), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(files["table"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            w.writerows(csv_rows(results))
        with open(files["timings"], "w") as fh:
            json.dump({"schema_version": SCHEMA_VERSION,
                       "timings": [{"seed": r.seed, **r.wall_clock} for r in results]},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return files


def load_results(path) -> dict:
    with open(Path(path) / "results.json") as fh:
        return json.load(fh)
