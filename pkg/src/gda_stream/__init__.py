"""Streaming Bayesian adaptation engine for drifting embedding streams."""

from .adapter import (AdapterState, RefineLoss, backward_and_step, ema_snapshot,
                      forward, init_adapter, refine_loss, refine_loss_and_grads)
from .drift import (CovarianceInflation, DriftSpec, GroundTruth, RotationDrift,
                    TranslationDrift, bayes_accuracy, generate,
                    rotation_benchmark_spec, verify_drift_bound)
from .errors import (ConfigError, DataError, GdaStreamError,
                     HomogeneityTestInfeasible, InfeasibleDriftError,
                     StreamFormatError)
from .gda import (LogitBundle, discriminant_scores, fuse_and_predict,
                  score_batch, sketch)
from .gmm import (GmmState, e_step, init_state, m_step, marginal_loglik)
from .homogeneity import (ClassMoments, CovarianceMode, HomogeneityReport,
                          box_m_test, class_moments)
from .io import (ClassPrototypes, EmbeddingBatch, StreamManifest, read_stream,
                 write_stream)
from .pipeline import (EvalSummary, PipelineConfig, PredictionRow, RunResult,
                       StreamEngine, run_longterm, run_stream, summarize)
from .stats import (PcaProjection, SpdSummary, f_quantile, fit_pca,
                    gaussian_kl, gaussian_logpdf, regularized_spd,
                    weighted_moments)

__version__ = "0.1.0"
