import numpy as np
import pytest

from gda_stream.drift import generate, rotation_benchmark_spec
from gda_stream.errors import ConfigError, DataError
from gda_stream.gda import sketch
from gda_stream.homogeneity import CovarianceMode
from gda_stream.io import ClassPrototypes, EmbeddingBatch
from gda_stream.pipeline import (PipelineConfig, PredictionRow, StreamEngine,
                                 rechunk, records_to_csv, run_longterm,
                                 run_stream, summarize)


@pytest.fixture(scope="module")
def small_stream():
    spec = rotation_benchmark_spec(seed=0, domains=4, batches_per_domain=2,
                                   batch_size=64, total_degrees=20.0, kl_budget=0.6)
    return generate(spec)


class TestConfig:
    def test_defaults_valid(self):
        PipelineConfig().validate()

    @pytest.mark.parametrize("kwargs", [
        dict(alpha=-1.0), dict(lr=0.0), dict(ema_decay=1.5), dict(kappa=0.0),
        dict(kappa=1.0), dict(pca_dim=0), dict(rounds=0), dict(batch_size=0),
        dict(force_mode="qqq"), dict(disable=frozenset({"nope"})), dict(tau=-0.1),
    ])
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            PipelineConfig(**kwargs).validate()


class TestAblationCollapse:
    def test_disabling_everything_reproduces_zero_shot(self, small_stream):
        batches, protos, _ = small_stream
        config = PipelineConfig(disable=frozenset({"em", "fusion", "self-paced"}))
        result = run_stream(batches, protos, config)
        preds = iter([r.prediction for r in result.records])
        for batch in batches:
            feats = batch.features.astype(np.float64)
            feats /= np.linalg.norm(feats, axis=1, keepdims=True)
            logits, _ = sketch(feats, protos)
            expected = logits.argmax(axis=1)
            got = np.array([next(preds) for _ in range(batch.size)])
            np.testing.assert_array_equal(got, expected)

    def test_alpha_zero_frozen_equals_pure_sketch(self, small_stream):
        batches, protos, _ = small_stream
        a = run_stream(batches, protos,
                       PipelineConfig(alpha=0.0, disable=frozenset({"self-paced"})))
        b = run_stream(batches, protos,
                       PipelineConfig(disable=frozenset({"fusion", "self-paced"})))
        assert [r.prediction for r in a.records] == [r.prediction for r in b.records]


class TestDeterminismAndCausality:
    def test_repeat_runs_bit_identical(self, small_stream):
        batches, protos, _ = small_stream
        r1 = run_stream(batches, protos, PipelineConfig(seed=7))
        r2 = run_stream(batches, protos, PipelineConfig(seed=7))
        assert records_to_csv(r1.records) == records_to_csv(r2.records)

    def test_prefix_identity_under_truncation(self, small_stream):
        batches, protos, _ = small_stream
        full = run_stream(batches, protos, PipelineConfig())
        t = 5
        truncated = run_stream(batches[:t], protos, PipelineConfig())
        full_by_step: dict[int, list[int]] = {}
        for r in full.records:
            full_by_step.setdefault(r.step, []).append(r.prediction)
        trunc_by_step: dict[int, list[int]] = {}
        for r in truncated.records:
            trunc_by_step.setdefault(r.step, []).append(r.prediction)
        for step in range(t):
            assert trunc_by_step[step] == full_by_step[step]


class TestLongTerm:
    def test_single_round_matches_run_stream(self, small_stream):
        batches, protos, _ = small_stream
        a = run_stream(batches, protos, PipelineConfig())
        b = run_longterm(batches, protos, PipelineConfig(), rounds=1)
        assert a.records == b.records

    def test_reset_toggle_gives_identical_rounds(self, small_stream):
        batches, protos, _ = small_stream
        config = PipelineConfig(disable=frozenset({"continual"}))
        result = run_longterm(batches, protos, config, rounds=3)
        n = len(batches)
        per_round = [[], [], []]
        for r in result.records:
            per_round[r.step // n].append(r.prediction)
        assert per_round[0] == per_round[1] == per_round[2]

    def test_carried_state_changes_rounds(self, small_stream):
        batches, protos, _ = small_stream
        result = run_longterm(batches, protos, PipelineConfig(), rounds=2)
        assert len(result.summary.per_round_accuracy) == 2


class TestSummarize:
    def make_rows(self, domain_sizes, accuracies):
        rows = []
        step = 0
        for domain, (n, acc) in enumerate(zip(*[domain_sizes, accuracies])):
            correct = int(round(acc * n))
            for i in range(n):
                pred = 1 if i < correct else 0
                rows.append(PredictionRow(step=step, domain=domain,
                                          prediction=pred, label=1))
            step += 1
        return rows

    def test_weighted_average(self):
        rows = self.make_rows([10, 30], [1.0, 0.5])
        summary = summarize(rows)
        assert summary.weighted_accuracy == pytest.approx(0.625, abs=1e-15)
        assert summary.per_domain_accuracy == {0: 1.0, 1: 0.5}

    def test_weighted_identity(self):
        rows = self.make_rows([13, 7, 20], [0.8, 0.3, 0.55])
        s = summarize(rows)
        expected = sum(s.per_domain_accuracy[d] * s.per_domain_sizes[d]
                       for d in s.per_domain_accuracy) / sum(s.per_domain_sizes.values())
        assert abs(s.weighted_accuracy - expected) < 1e-12

    def test_single_domain(self):
        rows = self.make_rows([20], [0.85])
        s = summarize(rows)
        assert s.weighted_accuracy == pytest.approx(0.85)

    def test_order_independent(self):
        rows = self.make_rows([10, 30], [1.0, 0.5])
        shuffled = list(reversed(rows))
        assert summarize(rows).weighted_accuracy == \
            summarize(shuffled).weighted_accuracy

    def test_missing_labels_rejected(self):
        rows = [PredictionRow(0, 0, 1, None)]
        with pytest.raises(DataError, match="missing labels"):
            summarize(rows)


class TestRechunk:
    def make_batches(self, sizes, domains, with_labels=True):
        rng = np.random.default_rng(0)
        out = []
        for t, (n, d) in enumerate(zip(sizes, domains)):
            labels = rng.integers(0, 3, size=n).astype(np.uint32) if with_labels else None
            out.append(EmbeddingBatch(features=rng.normal(size=(n, 4)).astype(np.float32),
                                      step_index=t, domain_id=d, labels=labels))
        return out

    def test_splits_and_renumbers(self):
        batches = self.make_batches([8, 8], [0, 0])
        chunks = list(rechunk(batches, 4))
        assert [c.size for c in chunks] == [4, 4, 4, 4]
        assert [c.step_index for c in chunks] == [0, 1, 2, 3]
        merged = np.concatenate([c.features for c in chunks])
        original = np.concatenate([b.features for b in batches])
        assert merged.tobytes() == original.tobytes()

    def test_never_crosses_domains(self):
        batches = self.make_batches([6, 6], [0, 1])
        chunks = list(rechunk(batches, 4))
        assert [(c.size, c.domain_id) for c in chunks] == \
            [(4, 0), (2, 0), (4, 1), (2, 1)]

    def test_merges_within_domain(self):
        batches = self.make_batches([4, 4, 4], [0, 0, 0])
        chunks = list(rechunk(batches, 8))
        assert [c.size for c in chunks] == [8, 4]

    def test_labels_carried(self):
        batches = self.make_batches([6], [0])
        chunks = list(rechunk(batches, 4))
        joined = np.concatenate([c.labels for c in chunks])
        np.testing.assert_array_equal(joined, batches[0].labels)

    def test_unlabeled_stays_unlabeled(self):
        batches = self.make_batches([6], [0], with_labels=False)
        assert all(c.labels is None for c in rechunk(batches, 4))


class TestEngineModes:
    def test_force_modes(self, small_stream):
        batches, protos, _ = small_stream
        for force, mode in (("lda", CovarianceMode.HOMOGENEOUS),
                            ("qda", CovarianceMode.HETEROGENEOUS)):
            engine = StreamEngine(protos, PipelineConfig(force_mode=force))
            engine.process_batch(batches[0].features)
            assert engine.mode is mode
            assert engine.report is None

    def test_disable_hypothesis_test_defaults_to_per_class(self, small_stream):
        batches, protos, _ = small_stream
        engine = StreamEngine(protos, PipelineConfig(disable=frozenset({"hypothesis-test"})))
        engine.process_batch(batches[0].features)
        assert engine.mode is CovarianceMode.HETEROGENEOUS
        assert engine.report is None

    def test_small_first_batch_falls_back_with_warning(self):
        rng = np.random.default_rng(1)
        protos = ClassPrototypes(prototypes=rng.normal(size=(5, 6)).astype(np.float32),
                                 class_names=[f"c{i}" for i in range(5)])
        engine = StreamEngine(protos, PipelineConfig())
        engine.process_batch(rng.normal(size=(6, 6)))
        assert engine.mode is CovarianceMode.HOMOGENEOUS
        assert any("infeasible" in w for w in engine.warnings)

    def test_mode_fixed_after_first_batch(self, small_stream):
        batches, protos, _ = small_stream
        engine = StreamEngine(protos, PipelineConfig())
        engine.process_batch(batches[0].features)
        first_mode = engine.mode
        for b in batches[1:4]:
            engine.process_batch(b.features)
        assert engine.mode is first_mode

    def test_tau_override(self, small_stream):
        batches, protos, _ = small_stream
        engine = StreamEngine(protos, PipelineConfig(tau=0.5))
        assert engine.prototypes.temperature == 0.5

    def test_engine_is_label_blind(self, small_stream):
        # the adaptation entry point accepts only a feature matrix
        import inspect
        params = inspect.signature(StreamEngine.process_batch).parameters
        assert list(params) == ["self", "raw_features"]


class TestCheckpointResume:
    def test_resumed_engine_continues_identically(self, small_stream, tmp_path):
        batches, protos, _ = small_stream
        config = PipelineConfig()
        engine = StreamEngine(protos, config)
        for b in batches[:4]:
            engine.process_batch(b.features)
        ckpt = tmp_path / "state.bin"
        engine.save_checkpoint(ckpt)
        tail_direct = [engine.process_batch(b.features).predictions
                       for b in batches[4:]]

        resumed = StreamEngine(protos, config)
        resumed.load_checkpoint(ckpt)
        assert resumed.step == 4
        tail_resumed = [resumed.process_batch(b.features).predictions
                        for b in batches[4:]]
        for a, b in zip(tail_direct, tail_resumed):
            np.testing.assert_array_equal(a, b)
