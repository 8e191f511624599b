"""Request/response models for the adaptation service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..pipeline import EvalSummary, PipelineConfig


class ConfigModel(BaseModel):
    alpha: float = 1.0
    lr: float = 0.005
    ema_decay: float = 0.99
    reg_strength: float = 0.01
    prior_variance: float = 0.1
    tau: float | None = None
    kappa: float = 0.05
    pca_dim: int = 10
    batch_size: int | None = None
    force_mode: str = "auto"
    disable: list[str] = Field(default_factory=list)
    seed: int | None = None

    def to_config(self, rounds: int = 1) -> PipelineConfig:
        return PipelineConfig(alpha=self.alpha, lr=self.lr, ema_decay=self.ema_decay,
                              reg_strength=self.reg_strength,
                              prior_variance=self.prior_variance, tau=self.tau,
                              kappa=self.kappa, pca_dim=self.pca_dim, rounds=rounds,
                              batch_size=self.batch_size, force_mode=self.force_mode,
                              disable=frozenset(self.disable), seed=self.seed)


class PrototypesModel(BaseModel):
    matrix: list[list[float]]
    class_names: list[str] | None = None
    temperature: float = 0.01


class SessionCreateRequest(BaseModel):
    prototypes: PrototypesModel
    config: ConfigModel = Field(default_factory=ConfigModel)


class SessionCreated(BaseModel):
    session_id: str
    n_classes: int
    dim: int


class BatchRequest(BaseModel):
    features: list[list[float]]
    domain_id: int = 0
    labels: list[int] | None = None


class BatchResponse(BaseModel):
    step: int
    predictions: list[int]
    covariance_mode: str


class SessionStateResponse(BaseModel):
    session_id: str
    steps: int
    covariance_mode: str | None
    homogeneity: str | None
    warnings: list[str]


class SummaryModel(BaseModel):
    per_domain_accuracy: dict[int, float]
    per_domain_sizes: dict[int, int]
    weighted_accuracy: float
    per_round_accuracy: list[float]
    n_samples: int
    runtime_seconds: float
    homogeneity: str | None = None

    @classmethod
    def from_summary(cls, summary: EvalSummary) -> "SummaryModel":
        return cls(per_domain_accuracy=summary.per_domain_accuracy,
                   per_domain_sizes=summary.per_domain_sizes,
                   weighted_accuracy=summary.weighted_accuracy,
                   per_round_accuracy=list(summary.per_round_accuracy),
                   n_samples=summary.n_samples,
                   runtime_seconds=summary.runtime_seconds,
                   homogeneity=summary.homogeneity.as_text()
                   if summary.homogeneity is not None else None)


class RunRequest(BaseModel):
    stream_dir: str
    config: ConfigModel = Field(default_factory=ConfigModel)
    rounds: int = 1
    out_dir: str | None = None


class RunResponse(BaseModel):
    summary: SummaryModel
    warnings: list[str]
    out_dir: str | None = None


class SimulateRequest(BaseModel):
    spec_text: str
    out_dir: str


class SimulateResponse(BaseModel):
    out_dir: str
    n_batches: int
    n_samples: int
    n_domains: int
    max_step_kl: float


class DriftCheckRequest(BaseModel):
    stream_dir: str
    budget: float


class DriftCheckResponse(BaseModel):
    passed: bool
    max_kl: float
    budget: float
    transition_kls: list[float]
    boundary_steps: list[int]
    offending_step: int | None
