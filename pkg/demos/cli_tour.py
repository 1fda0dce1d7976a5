"""
The command-line tools end to end
==================================

Generates a mixture and dataset, profiles the target variance, trains a
tiny model for a few iterations, samples with the oracle and the model, and
benchmarks two plans. Everything goes to a temporary directory.
"""

import json
import tempfile
from pathlib import Path

from stable_velocity import io
from stable_velocity.cli import main

work = Path(tempfile.mkdtemp(prefix="sv-tour-"))
print("working in", work)

main(["make-gmm", "--dim", "2", "--modes", "8", "--seed", "7", "--out", str(work / "spec.json"),
      "--samples", "5000", "--dataset", str(work / "data.svl")])

config = {"seed": 7, "gmm": "spec.json", "dataset": "data.svl", "schedule": {"kind": "linear"},
          "targets": {"loss": "stablevm", "n": 256, "batch_size": 64, "hidden": [64, 64], "lr": 1e-3,
                      "probe_interval": 50},
          "solver": {"xi": 0.3, "high_steps": 19, "low_steps": 9}}
(work / "run.json").write_text(json.dumps(config, indent=1))
cfg = str(work / "run.json")

main(["variance-curve", "--config", cfg, "--estimator", "empirical", "--grid", "0.05:0.95:10", "--probes", "512",
      "--out", str(work / "curve.csv"), "--svg", str(work / "curve.svg")])
for row in io.read_csv(work / "curve.csv"):
    print(f"V({float(row['t']):.2f}) = {float(row['value']):.4f}")

main(["train", "--config", cfg, "--out", str(work / "run"), "--iterations", "150"])
print(open(work / "run" / "metrics.csv").read())

main(["sample", "--config", cfg, "--count", "2000", "--out", str(work / "oracle.svl")])
main(["sample", "--config", cfg, "--count", "2000", "--velocity", str(work / "run" / "checkpoint.svck"),
      "--out", str(work / "model.svl")])
for name in ("oracle", "model"):
    summary = json.loads((work / f"{name}.svl.json").read_text())
    print(f"{name:6s} endpoints: avg log-likelihood {summary['avg_log_likelihood']:.3f}")

(work / "plans.json").write_text(json.dumps([
    {"id": "two-regime", "xi": 0.3},
    {"id": "euler-28", "xi": 1.0, "high_steps": 0, "low_steps": 28, "stablevs": False},
]))
main(["solver-bench", "--config", cfg, "--plans", str(work / "plans.json"), "--reference-steps", "2000",
      "--count", "256", "--out", str(work / "bench.csv")])
print(open(work / "bench.csv").read())
