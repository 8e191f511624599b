"""Filesystem-level workflows shared by the CLI and the service."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

from . import drift as drift_mod
from .errors import DataError
from .io import read_stream, write_stream
from .pipeline import (PipelineConfig, RunResult, domain_accuracy_table,
                       records_to_csv, run_longterm)

GROUND_TRUTH_FILE = "ground_truth.npz"
SPEC_FILE = "drift_spec.txt"


def run_stream_dir(stream_dir, config: PipelineConfig, rounds: int = 1,
                   out_dir=None) -> RunResult:
    """Run the engine over an on-disk stream; optionally write the run
    artifacts (run.log, predictions.csv, domain_accuracy.dat)."""
    _, batches, prototypes = read_stream(stream_dir)
    result = run_longterm(batches, prototypes, config, rounds=rounds)
    if out_dir is not None:
        write_run_outputs(result, config, out_dir)
    return result


def write_run_outputs(result: RunResult, config: PipelineConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []

    csv_path = out / "predictions.csv"
    csv_path.write_text(records_to_csv(result.records))
    wrote.append(csv_path)

    log_lines = ["[config]"]
    for key, value in asdict(config).items():
        if key == "disable":
            value = ",".join(sorted(value)) if value else "none"
        log_lines.append(f"{key}={value}")
    if result.warnings:
        log_lines.append("[warnings]")
        log_lines.extend(result.warnings)
    log_lines.append("[summary]")
    log_lines.append(result.summary.as_text())
    log_path = out / "run.log"
    log_path.write_text("\n".join(log_lines) + "\n")
    wrote.append(log_path)

    if result.summary.per_domain_accuracy:
        table_path = out / "domain_accuracy.dat"
        table_path.write_text(domain_accuracy_table(result.summary))
        wrote.append(table_path)
    return wrote


def simulate_to_dir(spec: drift_mod.DriftSpec, out_dir) -> dict:
    """Generate a stream from a drift spec and persist it with its ground
    truth and the drift-spec text."""
    batches, prototypes, ground_truth = drift_mod.generate(spec)
    out = Path(out_dir)
    manifest = write_stream(batches, prototypes, out)
    ground_truth.save(out / GROUND_TRUTH_FILE)
    (out / SPEC_FILE).write_text(drift_mod.format_spec_text(spec))
    report = drift_mod.verify_drift_bound(ground_truth, spec.kl_budget)
    return {
        "out_dir": str(out),
        "n_batches": manifest.total_batches,
        "n_samples": manifest.total_samples,
        "n_domains": len(manifest.domains),
        "max_step_kl": report.max_kl,
    }


def drift_check_dir(stream_dir, budget: float) -> drift_mod.DriftBoundReport:
    gt_path = Path(stream_dir) / GROUND_TRUTH_FILE
    if not gt_path.exists():
        raise DataError(
            f"no ground truth at {gt_path}; only simulated streams can be checked")
    ground_truth = drift_mod.GroundTruth.load(gt_path)
    return drift_mod.verify_drift_bound(ground_truth, budget)
