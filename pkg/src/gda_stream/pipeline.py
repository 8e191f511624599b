"""Per-batch orchestration of the full adaptation engine, plus metrics.

Fixed per-batch order:

  1. forward raw features through the adapter's EMA parameters, L2-normalize
  2. sketch logits / probabilities against the frozen prototypes
  3. first batch only: fit PCA on these normalized features, run the
     covariance homogeneity test, fix the covariance mode for the stream
  4. mixture E-step with the previous state
  5. mixture M-step producing the current state
  6. discriminant scores under the current state
  7. fuse with the sketch logits and predict (the reported outputs)
  8. one self-paced gradient step on the live adapter parameters using the
     fused distribution as fixed pseudo-labels, then the EMA update

The adaptation path never sees labels: ``StreamEngine.process_batch`` takes
a feature matrix only. Labels are joined afterwards, purely for metrics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import adapter as adapter_mod
from . import gmm as gmm_mod
from .errors import ConfigError, DataError, HomogeneityTestInfeasible
from .gda import discriminant_scores, fuse_and_predict, sketch
from .homogeneity import (DEFAULT_KAPPA, DEFAULT_PCA_DIM, CovarianceMode,
                          HomogeneityReport, box_m_test, class_moments)
from .io import ClassPrototypes, EmbeddingBatch
from .stats import fit_pca

DISABLE_CHOICES = ("hypothesis-test", "em", "fusion", "self-paced", "continual")
FORCE_MODE_CHOICES = ("auto", "lda", "qda")


@dataclass(frozen=True)
class PipelineConfig:
    """All run-time knobs of the engine."""

    alpha: float = 1.0                 # fusion weight on discriminant scores
    lr: float = 0.005                  # adapter learning rate
    ema_decay: float = 0.99            # adapter EMA decay
    reg_strength: float = 0.01        # covariance ridge mix-in per update
    prior_variance: float = 0.1        # ridge target variance
    tau: float | None = None           # overrides the prototypes' temperature
    kappa: float = DEFAULT_KAPPA       # homogeneity significance level
    pca_dim: int = DEFAULT_PCA_DIM     # homogeneity test subspace dimension
    rounds: int = 1
    batch_size: int | None = None      # re-chunk the stream when set
    force_mode: str = "auto"
    disable: frozenset[str] = frozenset()
    seed: int | None = None            # recorded for log provenance only

    def validate(self) -> None:
        positive = {"lr": self.lr, "reg_strength": self.reg_strength,
                    "prior_variance": self.prior_variance, "kappa": self.kappa}
        for name, value in positive.items():
            if not value > 0.0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.kappa >= 1.0:
            raise ConfigError("kappa must lie in (0, 1)")
        if self.alpha < 0.0:
            raise ConfigError("alpha must be >= 0")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError("ema_decay must lie in [0, 1]")
        if self.tau is not None and not self.tau > 0.0:
            raise ConfigError("tau must be positive")
        if self.pca_dim < 1:
            raise ConfigError("pca_dim must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.force_mode not in FORCE_MODE_CHOICES:
            raise ConfigError(f"force_mode must be one of {FORCE_MODE_CHOICES}")
        unknown = set(self.disable) - set(DISABLE_CHOICES)
        if unknown:
            raise ConfigError(f"unknown disable toggles: {sorted(unknown)}; "
                              f"choices are {DISABLE_CHOICES}")

    def disabled(self, component: str) -> bool:
        return component in self.disable


class PredictionRow(NamedTuple):
    step: int
    domain: int
    prediction: int
    label: int | None


@dataclass(frozen=True)
class BatchResult:
    step: int
    predictions: np.ndarray
    covariance_mode: CovarianceMode


@dataclass(frozen=True)
class EvalSummary:
    per_domain_accuracy: dict[int, float]
    per_domain_sizes: dict[int, int]
    weighted_accuracy: float
    per_round_accuracy: tuple[float, ...]
    homogeneity: HomogeneityReport | None
    runtime_seconds: float
    n_samples: int

    def as_text(self) -> str:
        lines = [f"samples={self.n_samples}",
                 f"weighted_accuracy={self.weighted_accuracy!r}"]
        for d in sorted(self.per_domain_accuracy):
            lines.append(f"domain {d} accuracy={self.per_domain_accuracy[d]!r} "
                         f"samples={self.per_domain_sizes[d]}")
        for i, acc in enumerate(self.per_round_accuracy, start=1):
            lines.append(f"round {i} accuracy={acc!r}")
        lines.append(f"runtime_seconds={self.runtime_seconds:.3f}")
        if self.homogeneity is not None:
            lines.append(self.homogeneity.as_text())
        return "\n".join(lines)


class StreamEngine:
    """Owns the evolving state for one stream; strictly sequential in t."""

    def __init__(self, prototypes: ClassPrototypes, config: PipelineConfig):
        config.validate()
        if config.tau is not None and config.tau != prototypes.temperature:
            prototypes = ClassPrototypes(prototypes=prototypes.prototypes,
                                         class_names=list(prototypes.class_names),
                                         temperature=config.tau)
        self.prototypes = prototypes
        self.config = config
        self.adapter = adapter_mod.init_adapter(prototypes.dim, lr=config.lr,
                                                ema_decay=config.ema_decay)
        self.gmm: gmm_mod.GmmState | None = None
        self.mode: CovarianceMode | None = None
        self.report: HomogeneityReport | None = None
        self.step = 0
        self.warnings: list[str] = []

    def _fresh_gmm(self) -> gmm_mod.GmmState:
        return gmm_mod.init_state(self.prototypes, self.mode,
                                  reg_strength=self.config.reg_strength,
                                  prior_variance=self.config.prior_variance)

    def _decide_mode(self, feats: np.ndarray, sketch_probs: np.ndarray) -> None:
        cfg = self.config
        if cfg.force_mode == "lda":
            self.mode = CovarianceMode.HOMOGENEOUS
            return
        if cfg.force_mode == "qda":
            self.mode = CovarianceMode.HETEROGENEOUS
            return
        if cfg.disabled("hypothesis-test"):
            # no test: assume per-class structure unconditionally
            self.mode = CovarianceMode.HETEROGENEOUS
            return
        n = feats.shape[0]
        d = min(cfg.pca_dim, n - 1, feats.shape[1])
        if d < 1:
            self.warnings.append("homogeneity test infeasible (batch too small); "
                                 "falling back to homogeneous covariance")
            self.mode = CovarianceMode.HOMOGENEOUS
            return
        if d < cfg.pca_dim:
            self.warnings.append(f"pca dim reduced from {cfg.pca_dim} to {d} "
                                 "to fit the first batch")
        try:
            projection = fit_pca(feats, d)
            moments = class_moments(projection.transform(feats), sketch_probs)
            self.report = box_m_test(moments, kappa=cfg.kappa)
            self.mode = self.report.decision
        except (HomogeneityTestInfeasible, ValueError) as exc:
            self.warnings.append(f"homogeneity test infeasible ({exc}); "
                                 "falling back to homogeneous covariance")
            self.mode = CovarianceMode.HOMOGENEOUS

    def process_batch(self, raw_features: np.ndarray) -> BatchResult:
        """Adapt to one unlabeled batch and return its predictions."""
        cfg = self.config
        X = np.atleast_2d(np.asarray(raw_features, dtype=np.float64))

        fresh_start = False
        if cfg.disabled("continual") and self.step > 0:
            # stateless replay: forget everything except the covariance mode
            self.gmm = self._fresh_gmm()
            self.adapter = adapter_mod.init_adapter(self.prototypes.dim,
                                                    lr=cfg.lr, ema_decay=cfg.ema_decay)
            fresh_start = True

        feats = adapter_mod.forward(self.adapter, X, use_ema=True)
        sketch_logits, sketch_probs = sketch(feats, self.prototypes)

        if self.step == 0:
            self._decide_mode(feats, sketch_probs)
            self.gmm = self._fresh_gmm()
            fresh_start = True
        elif cfg.disabled("em"):
            # no temporal accumulation: every batch restarts from the prior state
            self.gmm = self._fresh_gmm()
            fresh_start = True

        if fresh_start:
            # The first update of a fresh mixture is seeded with the sketch
            # distribution: the untrained identity-covariance state would
            # yield near-uniform posteriors and permanently blur the classes.
            resp = sketch_probs
        else:
            resp = gmm_mod.e_step(self.gmm, feats)
        self.gmm = gmm_mod.m_step(self.gmm, feats, resp)
        disc = discriminant_scores(self.gmm, feats)

        if cfg.disabled("fusion"):
            adapted = sketch_logits
            predictions = np.argmax(adapted, axis=1)
        else:
            adapted, predictions = fuse_and_predict(sketch_logits, disc, cfg.alpha)

        if not cfg.disabled("self-paced"):
            shifted = adapted - adapted.max(axis=1, keepdims=True)
            targets = np.exp(shifted)
            targets /= targets.sum(axis=1, keepdims=True)
            self.adapter = adapter_mod.backward_and_step(self.adapter, X,
                                                         self.prototypes, targets)

        result = BatchResult(step=self.step, predictions=predictions,
                             covariance_mode=self.mode)
        self.step += 1
        return result

    def save_checkpoint(self, path) -> None:
        """Persist mixture state and adapter (GDAS + GDAA blocks)."""
        if self.gmm is None:
            raise DataError("cannot checkpoint an engine before its first batch")
        with open(path, "wb") as fh:
            gmm_mod.save_state(self.gmm, fh)
            adapter_mod.save_adapter(self.adapter, fh)

    def load_checkpoint(self, path) -> None:
        """Resume from a checkpoint written by save_checkpoint."""
        with open(path, "rb") as fh:
            self.gmm = gmm_mod.load_state(fh, reg_strength=self.config.reg_strength,
                                          prior_variance=self.config.prior_variance)
            self.adapter = adapter_mod.load_adapter(fh, self.gmm.dim,
                                                    lr=self.config.lr,
                                                    ema_decay=self.config.ema_decay)
        if self.gmm.dim != self.prototypes.dim or self.gmm.n_classes != self.prototypes.n_classes:
            raise DataError("checkpoint shape disagrees with prototypes")
        self.mode = self.gmm.mode
        self.step = self.gmm.step


def rechunk(batches: Iterable[EmbeddingBatch], size: int) -> Iterable[EmbeddingBatch]:
    """Re-slice a stream into batches of ``size`` without crossing domain
    boundaries; step indices are renumbered and the last chunk of a domain
    may be smaller. Labels survive only where every source batch of the
    domain carries them. Buffers at most one domain at a time."""
    step = 0
    current: list[EmbeddingBatch] = []

    def emit(group: list[EmbeddingBatch]):
        nonlocal step
        feats = np.concatenate([b.features for b in group]) if len(group) > 1 \
            else group[0].features
        labels = None
        if all(b.labels is not None for b in group):
            labels = np.concatenate([b.labels for b in group]) if len(group) > 1 \
                else group[0].labels
        domain = group[0].domain_id
        for start in range(0, feats.shape[0], size):
            end = min(start + size, feats.shape[0])
            yield EmbeddingBatch(features=feats[start:end], step_index=step,
                                 domain_id=domain,
                                 labels=None if labels is None else labels[start:end])
            step += 1

    for batch in batches:
        if current and batch.domain_id != current[0].domain_id:
            yield from emit(current)
            current = []
        current.append(batch)
    if current:
        yield from emit(current)


@dataclass(frozen=True)
class RunResult:
    records: tuple[PredictionRow, ...]
    summary: EvalSummary
    warnings: tuple[str, ...] = ()


def _accuracy(rows: Sequence[PredictionRow]) -> float:
    labeled = [r for r in rows if r.label is not None]
    if not labeled:
        raise DataError("missing labels: cannot compute accuracy")
    return sum(1 for r in labeled if r.prediction == r.label) / len(labeled)


def summarize(records: Sequence[PredictionRow], *,
              homogeneity: HomogeneityReport | None = None,
              runtime_seconds: float = 0.0,
              per_round: Sequence[float] | None = None) -> EvalSummary:
    """Per-domain top-1 accuracy and the sample-size weighted average.

    Order-independent: rows are grouped by domain id regardless of stream
    position. Raises DataError when no labels are present.
    """
    labeled = [r for r in records if r.label is not None]
    if not labeled:
        raise DataError("missing labels: cannot compute accuracy")
    domains: dict[int, list[PredictionRow]] = {}
    for row in labeled:
        domains.setdefault(row.domain, []).append(row)
    per_domain_acc = {}
    per_domain_n = {}
    for d, rows in domains.items():
        per_domain_n[d] = len(rows)
        per_domain_acc[d] = sum(1 for r in rows if r.prediction == r.label) / len(rows)
    total = sum(per_domain_n.values())
    weighted = sum(per_domain_acc[d] * per_domain_n[d] for d in domains) / total
    return EvalSummary(per_domain_accuracy=per_domain_acc,
                       per_domain_sizes=per_domain_n,
                       weighted_accuracy=weighted,
                       per_round_accuracy=tuple(per_round) if per_round else (weighted,),
                       homogeneity=homogeneity,
                       runtime_seconds=runtime_seconds,
                       n_samples=total)


def _run_rounds(batches, prototypes: ClassPrototypes, config: PipelineConfig,
                rounds: int, engine: StreamEngine | None = None) -> RunResult:
    if engine is None:
        engine = StreamEngine(prototypes, config)
    start = time.perf_counter()
    records: list[PredictionRow] = []
    round_accs: list[float] = []
    any_labels = False
    step = 0
    for _ in range(rounds):
        round_rows: list[PredictionRow] = []
        source = batches if config.batch_size is None \
            else rechunk(batches, config.batch_size)
        for batch in source:
            result = engine.process_batch(batch.features)
            labels = batch.labels
            if labels is not None:
                any_labels = True
            for i, pred in enumerate(result.predictions):
                round_rows.append(PredictionRow(
                    step=step, domain=batch.domain_id, prediction=int(pred),
                    label=int(labels[i]) if labels is not None else None))
            step += 1
        records.extend(round_rows)
        if any_labels:
            round_accs.append(_accuracy(round_rows))
    runtime = time.perf_counter() - start
    if any_labels:
        summary = summarize(records, homogeneity=engine.report,
                            runtime_seconds=runtime, per_round=round_accs)
    else:
        summary = EvalSummary(per_domain_accuracy={}, per_domain_sizes={},
                              weighted_accuracy=float("nan"),
                              per_round_accuracy=(), homogeneity=engine.report,
                              runtime_seconds=runtime, n_samples=0)
    return RunResult(records=tuple(records), summary=summary,
                     warnings=tuple(engine.warnings))


def run_stream(batches, prototypes: ClassPrototypes, config: PipelineConfig,
               engine: StreamEngine | None = None) -> RunResult:
    """Process a stream once, in order; predictions are strictly causal."""
    return _run_rounds(batches, prototypes, config, rounds=1, engine=engine)


def run_longterm(batches, prototypes: ClassPrototypes, config: PipelineConfig,
                 rounds: int, engine: StreamEngine | None = None) -> RunResult:
    """Replay the stream ``rounds`` times with state carried across rounds."""
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    return _run_rounds(batches, prototypes, config, rounds=rounds, engine=engine)


def records_to_csv(records: Sequence[PredictionRow]) -> str:
    lines = ["step,domain,prediction,label"]
    for r in records:
        label = "" if r.label is None else str(r.label)
        lines.append(f"{r.step},{r.domain},{r.prediction},{label}")
    return "\n".join(lines) + "\n"


def domain_accuracy_table(summary: EvalSummary) -> str:
    """gnuplot-friendly table: domain, accuracy, sample count."""
    lines = ["# domain accuracy samples"]
    for d in sorted(summary.per_domain_accuracy):
        lines.append(f"{d} {summary.per_domain_accuracy[d]:.6f} "
                     f"{summary.per_domain_sizes[d]}")
    return "\n".join(lines) + "\n"
