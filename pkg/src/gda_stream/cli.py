"""Command-line interface.

``run``, ``simulate`` and ``verify-drift`` operate on local stream
directories in-process; ``run --server URL`` instead streams batches through
a running service (thin client) and writes the same artifacts locally.
``serve`` starts the HTTP service.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from .errors import ConfigError, DataError
from .pipeline import PipelineConfig, PredictionRow, StreamEngine, summarize
from .workflows import (drift_check_dir, run_stream_dir, simulate_to_dir,
                        write_run_outputs)


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)
    return wrapper


@click.group()
def main():
    """Streaming Bayesian adaptation over embedding streams."""


@main.command()
@click.option("--stream", "stream_dir", required=True,
              type=click.Path(exists=True, file_okay=False), help="Stream directory.")
@click.option("--alpha", type=float, default=1.0, show_default=True,
              help="Fusion weight on discriminant scores.")
@click.option("--lr", type=float, default=0.005, show_default=True,
              help="Adapter learning rate.")
@click.option("--ema", type=float, default=0.99, show_default=True,
              help="Adapter EMA decay.")
@click.option("--eps", type=float, default=0.01, show_default=True,
              help="Covariance regularization strength.")
@click.option("--prior-var", type=float, default=0.1, show_default=True,
              help="Covariance regularization target variance.")
@click.option("--tau", type=float, default=None,
              help="Sketch temperature override (default: from the stream).")
@click.option("--kappa", type=float, default=0.05, show_default=True,
              help="Homogeneity test significance level.")
@click.option("--pca-dim", type=int, default=10, show_default=True,
              help="Subspace dimension for the homogeneity test.")
@click.option("--batch-size", type=int, default=None,
              help="Re-chunk the stream to this batch size.")
@click.option("--rounds", type=int, default=1, show_default=True,
              help="Replay the stream this many times with carried state.")
@click.option("--force-mode", type=click.Choice(["lda", "qda", "auto"]),
              default="auto", show_default=True)
@click.option("--disable", multiple=True,
              type=click.Choice(["hypothesis-test", "em", "fusion",
                                 "self-paced", "continual"]),
              help="Disable a pipeline component (repeatable).")
@click.option("--seed", type=int, default=None, help="Recorded in the run log.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for run.log, predictions.csv, domain_accuracy.dat.")
@click.option("--server", default=None,
              help="Run through a gda-stream service at this base URL.")
@click.option("--save-state", type=click.Path(dir_okay=False), default=None,
              help="Write an engine checkpoint after the run.")
@click.option("--load-state", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Resume from an engine checkpoint.")
@_exit_codes
def run(stream_dir, alpha, lr, ema, eps, prior_var, tau, kappa, pca_dim,
        batch_size, rounds, force_mode, disable, seed, out_dir, server,
        save_state, load_state):
    """Adapt over a stream and report per-domain accuracy."""
    config = PipelineConfig(alpha=alpha, lr=lr, ema_decay=ema, reg_strength=eps,
                            prior_variance=prior_var, tau=tau, kappa=kappa,
                            pca_dim=pca_dim, rounds=rounds, batch_size=batch_size,
                            force_mode=force_mode, disable=frozenset(disable),
                            seed=seed)
    config.validate()
    if server is not None:
        _run_via_server(server, stream_dir, config, rounds, out_dir)
        return

    if load_state or save_state:
        from .io import read_stream
        from .pipeline import run_longterm

        _, batches, prototypes = read_stream(stream_dir)
        engine = StreamEngine(prototypes, config)
        if load_state:
            engine.load_checkpoint(load_state)
        result = run_longterm(batches, prototypes, config, rounds=rounds,
                              engine=engine)
        if out_dir is not None:
            write_run_outputs(result, config, out_dir)
        if save_state:
            engine.save_checkpoint(save_state)
    else:
        result = run_stream_dir(stream_dir, config, rounds=rounds, out_dir=out_dir)

    for warning in result.warnings:
        click.echo(f"warning: {warning}", err=True)
    if result.summary.n_samples:
        click.echo(result.summary.as_text())
    else:
        click.echo(f"processed {len(result.records)} predictions "
                   "(no labels present; accuracy unavailable)")
    if out_dir is not None:
        click.echo(f"artifacts written to {out_dir}")


def _run_via_server(server: str, stream_dir, config: PipelineConfig,
                    rounds: int, out_dir):
    """Thin client: create a session, stream the batches, collect predictions."""
    import httpx

    from .io import read_stream
    from .pipeline import rechunk

    _, batches, prototypes = read_stream(stream_dir)
    payload = {
        "prototypes": {
            "matrix": prototypes.prototypes.tolist(),
            "class_names": list(prototypes.class_names),
            "temperature": prototypes.temperature,
        },
        "config": {
            "alpha": config.alpha, "lr": config.lr, "ema_decay": config.ema_decay,
            "reg_strength": config.reg_strength,
            "prior_variance": config.prior_variance, "tau": config.tau,
            "kappa": config.kappa, "pca_dim": config.pca_dim,
            "batch_size": None, "force_mode": config.force_mode,
            "disable": sorted(config.disable), "seed": config.seed,
        },
    }
    base = server.rstrip("/")
    with httpx.Client(base_url=base, timeout=120.0) as client:
        created = client.post("/v1/sessions", json=payload)
        _raise_for_status(created)
        session_id = created.json()["session_id"]
        records: list[PredictionRow] = []
        try:
            step = 0
            for _ in range(rounds):
                source = batches if config.batch_size is None \
                    else rechunk(batches, config.batch_size)
                for batch in source:
                    request = {"features": batch.features.tolist(),
                               "domain_id": batch.domain_id}
                    if batch.labels is not None:
                        request["labels"] = [int(x) for x in batch.labels]
                    response = client.post(f"/v1/sessions/{session_id}/batches",
                                           json=request)
                    _raise_for_status(response)
                    preds = response.json()["predictions"]
                    for i, pred in enumerate(preds):
                        label = int(batch.labels[i]) if batch.labels is not None else None
                        records.append(PredictionRow(step=step, domain=batch.domain_id,
                                                     prediction=int(pred), label=label))
                    step += 1
            state = client.get(f"/v1/sessions/{session_id}")
            _raise_for_status(state)
            state = state.json()
        finally:
            client.delete(f"/v1/sessions/{session_id}")

    labeled = any(r.label is not None for r in records)
    if labeled:
        summary = summarize(records)
        click.echo(summary.as_text())
    else:
        summary = None
        click.echo(f"processed {len(records)} predictions "
                   "(no labels present; accuracy unavailable)")
    if state.get("homogeneity"):
        click.echo(state["homogeneity"])
    if out_dir is not None:
        from .pipeline import RunResult
        if summary is None:
            from .pipeline import EvalSummary
            summary = EvalSummary(per_domain_accuracy={}, per_domain_sizes={},
                                  weighted_accuracy=float("nan"),
                                  per_round_accuracy=(), homogeneity=None,
                                  runtime_seconds=0.0, n_samples=0)
        result = RunResult(records=tuple(records), summary=summary,
                           warnings=tuple(state.get("warnings", [])))
        write_run_outputs(result, config, out_dir)
        if state.get("homogeneity"):
            with open(Path(out_dir) / "run.log", "a") as fh:
                fh.write(state["homogeneity"] + "\n")
        click.echo(f"artifacts written to {out_dir}")


def _raise_for_status(response):
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except Exception:
            detail = response.text
        if response.status_code == 422:
            raise ConfigError(f"server rejected config: {detail}")
        raise DataError(f"server error {response.status_code}: {detail}")


@main.command()
@click.option("--spec", "spec_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Plain-text drift spec (key=value lines).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Output stream directory.")
@_exit_codes
def simulate(spec_path, out_dir):
    """Generate a synthetic drifting stream from a spec file."""
    from .drift import parse_spec_text

    spec = parse_spec_text(Path(spec_path).read_text())
    stats = simulate_to_dir(spec, out_dir)
    click.echo(f"wrote {stats['n_batches']} batches / {stats['n_samples']} samples "
               f"across {stats['n_domains']} domains to {stats['out_dir']}")
    click.echo(f"max per-step class KL: {stats['max_step_kl']:.6f}")


@main.command("verify-drift")
@click.option("--stream", "stream_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--delta", type=float, required=True, help="KL budget per step.")
@_exit_codes
def verify_drift(stream_dir, delta):
    """Check a simulated stream's drift against a KL budget."""
    if delta <= 0:
        raise ConfigError("delta must be positive")
    report = drift_check_dir(stream_dir, delta)
    for kl, step in zip(report.transition_kls, report.boundary_steps):
        click.echo(f"step {step}: max class KL = {kl:.6f}")
    click.echo(f"max = {report.max_kl:.6f}, budget = {report.budget}")
    if report.passed:
        click.echo("PASS")
    else:
        click.echo(f"FAIL at step {report.offending_step}")
        sys.exit(3)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
