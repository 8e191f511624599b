import pytest
from click.testing import CliRunner

from gda_stream.cli import main
from gda_stream.drift import format_spec_text, rotation_benchmark_spec
from gda_stream.workflows import simulate_to_dir


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def stream_dir(tmp_path):
    spec = rotation_benchmark_spec(seed=0, domains=4, batches_per_domain=2,
                                   batch_size=192, total_degrees=20.0, kl_budget=0.6)
    out = tmp_path / "stream"
    simulate_to_dir(spec, out)
    return out


def test_simulate_then_run(runner, tmp_path):
    spec = rotation_benchmark_spec(seed=1, domains=3, batches_per_domain=1,
                                   batch_size=32, total_degrees=10.0, kl_budget=0.6)
    spec_file = tmp_path / "spec.txt"
    spec_file.write_text(format_spec_text(spec, in_plane_mass=0.85))
    out = tmp_path / "stream"

    result = runner.invoke(main, ["simulate", "--spec", str(spec_file),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "manifest.txt").exists()
    assert (out / "ground_truth.npz").exists()

    result = runner.invoke(main, ["run", "--stream", str(out)])
    assert result.exit_code == 0, result.output
    assert "weighted_accuracy=" in result.output


def test_run_writes_artifacts(runner, stream_dir, tmp_path):
    out = tmp_path / "results"
    result = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "predictions.csv").exists()
    assert (out / "run.log").exists()
    assert (out / "domain_accuracy.dat").exists()
    header = (out / "predictions.csv").read_text().splitlines()[0]
    assert header == "step,domain,prediction,label"
    log = (out / "run.log").read_text()
    assert "homogeneity.decision=" in log


def test_run_deterministic_logs(runner, stream_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                      "--out", str(out), "--seed", "3"])
        assert result.exit_code == 0
        outs.append((out / "predictions.csv").read_bytes())
    assert outs[0] == outs[1]


def test_run_option_surface(runner, stream_dir):
    result = runner.invoke(main, [
        "run", "--stream", str(stream_dir), "--alpha", "0.5", "--lr", "0.001",
        "--ema", "0.9", "--eps", "0.02", "--prior-var", "0.2", "--tau", "0.05",
        "--kappa", "0.1", "--pca-dim", "5", "--rounds", "2",
        "--force-mode", "lda", "--disable", "self-paced", "--seed", "1"])
    assert result.exit_code == 0, result.output
    assert "round 2 accuracy=" in result.output


def test_config_error_exit_code(runner, stream_dir):
    result = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                  "--alpha", "-2.0"])
    assert result.exit_code == 2
    result = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                  "--rounds", "0"])
    assert result.exit_code == 2


def test_data_error_exit_code(runner, tmp_path):
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "manifest.txt").write_text("version=1\n")
    result = runner.invoke(main, ["run", "--stream", str(broken)])
    assert result.exit_code == 3


def test_infeasible_simulate_exit_code(runner, tmp_path):
    spec = rotation_benchmark_spec(seed=0, domains=3, batches_per_domain=1,
                                   total_degrees=80.0, kl_budget=0.5)
    spec_file = tmp_path / "spec.txt"
    spec_file.write_text(format_spec_text(spec, in_plane_mass=0.85))
    result = runner.invoke(main, ["simulate", "--spec", str(spec_file),
                                  "--out", str(tmp_path / "s")])
    assert result.exit_code == 2
    assert "KL budget" in result.output


def test_verify_drift_pass_and_fail(runner, stream_dir):
    result = runner.invoke(main, ["verify-drift", "--stream", str(stream_dir),
                                  "--delta", "0.6"])
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output

    result = runner.invoke(main, ["verify-drift", "--stream", str(stream_dir),
                                  "--delta", "1e-9"])
    assert result.exit_code == 3
    assert "FAIL" in result.output


def test_verify_drift_requires_ground_truth(runner, tmp_path, stream_dir):
    import shutil
    plain = tmp_path / "plain"
    shutil.copytree(stream_dir, plain)
    (plain / "ground_truth.npz").unlink()
    result = runner.invoke(main, ["verify-drift", "--stream", str(plain),
                                  "--delta", "0.5"])
    assert result.exit_code == 3


def test_state_checkpoint_round_trip(runner, stream_dir, tmp_path):
    ckpt = tmp_path / "state.bin"
    first = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                 "--save-state", str(ckpt)])
    assert first.exit_code == 0, first.output
    assert ckpt.exists()
    resumed = runner.invoke(main, ["run", "--stream", str(stream_dir),
                                   "--load-state", str(ckpt)])
    assert resumed.exit_code == 0, resumed.output


def test_unlabeled_stream_reports_prediction_count(runner, stream_dir, tmp_path):
    for f in stream_dir.glob("*.labels"):
        f.unlink()
    result = runner.invoke(main, ["run", "--stream", str(stream_dir)])
    assert result.exit_code == 0, result.output
    assert "no labels present" in result.output
