"""Synthetic temporally evolving embedding streams with verifiable drift.

Each stream is a sequence of domains; within a domain the generating
class-conditional Gaussians are constant, and consecutive domains differ by
one small trajectory step (a rigid rotation of all class means in a fixed
coordinate 2-plane, a translation along a fixed direction, or a geometric
covariance inflation). The per-step class-conditional KL divergence is
available in closed form, so a generated stream can be checked analytically
against its KL budget.

Prototypes are frozen at the first domain's class means, so a frozen
zero-shot scorer degrades as the stream drifts while the generating classes
stay equally separated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigError, DataError, InfeasibleDriftError
from .io import ClassPrototypes, EmbeddingBatch
from .stats import gaussian_kl

DEFAULT_KL_BUDGET = 0.5


@dataclass(frozen=True)
class RotationDrift:
    """Rigid rotation of every class mean in the (plane[0], plane[1]) plane."""

    plane: tuple[int, int] = (0, 1)
    total_degrees: float = 80.0

    kind = "rotation"


@dataclass(frozen=True)
class TranslationDrift:
    """All class means translated along a fixed direction."""

    direction: np.ndarray = None   # (D,), unit norm
    magnitude: float = 1.0

    kind = "mean_translation"


@dataclass(frozen=True)
class CovarianceInflation:
    """Covariance scale swept geometrically from start to end."""

    start_scale: float = 1.0
    end_scale: float = 2.0

    kind = "covariance_inflation"


Trajectory = Union[RotationDrift, TranslationDrift, CovarianceInflation]


@dataclass(frozen=True)
class DriftSpec:
    """Complete description of a synthetic stream; generation is a pure
    function of this object."""

    n_classes: int
    dim: int
    class_means: np.ndarray          # (K, D), unit rows
    covariance_scale: float          # per-dimension base variance
    trajectory: Trajectory
    domains: int = 9
    batches_per_domain: int = 5
    batch_size: int = 128
    kl_budget: float = DEFAULT_KL_BUDGET
    seed: int = 0
    class_scale_spread: float = 0.0  # >0 gives per-class covariance scales
    temperature: float = 0.01
    priors: np.ndarray | None = None

    def class_variances(self) -> np.ndarray:
        """Per-class per-dimension variance before any inflation step."""
        k = self.n_classes
        mult = 1.0 + self.class_scale_spread * np.arange(k) / max(k - 1, 1)
        return self.covariance_scale * mult

    def effective_priors(self) -> np.ndarray:
        if self.priors is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return np.asarray(self.priors, dtype=np.float64)


@dataclass(frozen=True)
class GroundTruth:
    """True generating parameters per domain plus all sample labels."""

    means: np.ndarray          # (J, K, D)
    covariances: np.ndarray    # (J, K, D, D)
    priors: np.ndarray         # (J, K)
    labels: np.ndarray         # (total_samples,) in stream order
    batches_per_domain: int
    batch_size: int

    @property
    def n_domains(self) -> int:
        return self.means.shape[0]

    @property
    def n_classes(self) -> int:
        return self.means.shape[1]

    def save(self, path) -> None:
        np.savez(Path(path), means=self.means, covariances=self.covariances,
                 priors=self.priors, labels=self.labels,
                 layout=np.array([self.batches_per_domain, self.batch_size]))

    @classmethod
    def load(cls, path) -> "GroundTruth":
        try:
            data = np.load(Path(path))
        except FileNotFoundError:
            raise DataError(f"ground truth file not found: {path}") from None
        layout = data["layout"]
        return cls(means=data["means"], covariances=data["covariances"],
                   priors=data["priors"], labels=data["labels"],
                   batches_per_domain=int(layout[0]), batch_size=int(layout[1]))


@dataclass(frozen=True)
class DriftBoundReport:
    """Closed-form per-transition KL check against a budget."""

    transition_kls: tuple[float, ...]   # max-over-classes KL per domain boundary
    boundary_steps: tuple[int, ...]     # batch step index at each boundary
    budget: float
    passed: bool
    offending_step: int | None

    @property
    def max_kl(self) -> float:
        return max(self.transition_kls) if self.transition_kls else 0.0


def _domain_params(spec: DriftSpec, frac: float) -> tuple[np.ndarray, np.ndarray]:
    """True (means, per-class variances) at trajectory fraction ``frac``."""
    means = spec.class_means.astype(np.float64).copy()
    variances = spec.class_variances()
    traj = spec.trajectory
    if isinstance(traj, RotationDrift):
        theta = np.deg2rad(traj.total_degrees) * frac
        p, q = traj.plane
        c, s = np.cos(theta), np.sin(theta)
        xp = means[:, p] * c - means[:, q] * s
        xq = means[:, p] * s + means[:, q] * c
        means[:, p], means[:, q] = xp, xq
    elif isinstance(traj, TranslationDrift):
        means = means + frac * traj.magnitude * np.asarray(traj.direction, dtype=np.float64)
    elif isinstance(traj, CovarianceInflation):
        scale = traj.start_scale * (traj.end_scale / traj.start_scale) ** frac
        variances = variances * scale
    else:
        raise ConfigError(f"unknown trajectory kind: {traj!r}")
    return means, variances


def _max_step_kl(spec: DriftSpec, transitions: int) -> float:
    """Largest class-conditional KL over one uniform trajectory step when the
    full trajectory is split into ``transitions`` steps."""
    if transitions < 1:
        return 0.0
    m0, v0 = _domain_params(spec, 0.0)
    m1, v1 = _domain_params(spec, 1.0 / transitions)
    eye = np.eye(spec.dim)
    kls = [gaussian_kl(m0[k], v0[k] * eye, m1[k], v1[k] * eye)
           for k in range(spec.n_classes)]
    return float(max(kls))


def _min_feasible_transitions(spec: DriftSpec, cap: int = 1 << 20) -> int | None:
    """Smallest number of uniform steps meeting the KL budget, or None."""
    lo, hi = 1, 1
    while _max_step_kl(spec, hi) > spec.kl_budget:
        hi *= 2
        if hi > cap:
            return None
    while lo < hi:
        mid = (lo + hi) // 2
        if _max_step_kl(spec, mid) > spec.kl_budget:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _validate_spec(spec: DriftSpec) -> None:
    if spec.kl_budget <= 0.0:
        raise ConfigError("kl budget must be positive")
    if spec.domains < 1 or spec.batches_per_domain < 1 or spec.batch_size < 1:
        raise ConfigError("domains, batches_per_domain, batch_size must be >= 1")
    if spec.covariance_scale <= 0.0:
        raise ConfigError("covariance scale must be positive")
    if spec.class_scale_spread < 0.0:
        raise ConfigError("class scale spread must be >= 0")
    means = np.asarray(spec.class_means, dtype=np.float64)
    if means.shape != (spec.n_classes, spec.dim):
        raise ConfigError("class means must be a K x D matrix")
    norms = np.linalg.norm(means, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ConfigError("class means must have unit norm")
    traj = spec.trajectory
    if isinstance(traj, RotationDrift):
        p, q = traj.plane
        if not (0 <= p < spec.dim and 0 <= q < spec.dim and p != q):
            raise ConfigError("rotation plane indices must be distinct and in range")
    elif isinstance(traj, TranslationDrift):
        direction = np.asarray(traj.direction, dtype=np.float64)
        if direction.shape != (spec.dim,):
            raise ConfigError("translation direction must be a D-vector")
        if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
            raise ConfigError("translation direction must have unit norm")
    elif isinstance(traj, CovarianceInflation):
        if traj.start_scale <= 0.0 or traj.end_scale <= 0.0:
            raise ConfigError("inflation scales must be positive")
    priors = spec.effective_priors()
    if priors.shape != (spec.n_classes,) or np.any(priors < 0) \
            or abs(priors.sum() - 1.0) > 1e-9:
        raise ConfigError("priors must be a K-simplex vector")


def generate(spec: DriftSpec) -> tuple[list[EmbeddingBatch], ClassPrototypes, GroundTruth]:
    """Deterministically generate a labeled stream from a drift spec.

    Raises InfeasibleDriftError (reporting the minimal compliant step count)
    when the requested domain count cannot satisfy the KL budget.
    """
    _validate_spec(spec)
    transitions = spec.domains - 1
    if transitions >= 1 and _max_step_kl(spec, transitions) > spec.kl_budget:
        min_steps = _min_feasible_transitions(spec)
        detail = (f"needs at least {min_steps + 1} domains" if min_steps is not None
                  else "no feasible step count found")
        raise InfeasibleDriftError(
            f"trajectory violates the KL budget {spec.kl_budget} with "
            f"{spec.domains} domains ({detail})",
            min_steps=min_steps)

    j_count, k, d = spec.domains, spec.n_classes, spec.dim
    priors = spec.effective_priors()
    eye = np.eye(d)
    gt_means = np.empty((j_count, k, d))
    gt_covs = np.empty((j_count, k, d, d))
    gt_priors = np.tile(priors, (j_count, 1))

    children = np.random.SeedSequence(spec.seed).spawn(j_count)
    batches: list[EmbeddingBatch] = []
    labels_all: list[np.ndarray] = []
    step = 0
    for j in range(j_count):
        frac = j / transitions if transitions >= 1 else 0.0
        means_j, vars_j = _domain_params(spec, frac)
        gt_means[j] = means_j
        gt_covs[j] = vars_j[:, None, None] * eye
        rng = np.random.default_rng(children[j])
        stds = np.sqrt(vars_j)
        for _ in range(spec.batches_per_domain):
            labels = rng.choice(k, size=spec.batch_size, p=priors).astype(np.uint32)
            noise = rng.standard_normal((spec.batch_size, d))
            feats = means_j[labels] + noise * stds[labels][:, None]
            batches.append(EmbeddingBatch(features=feats.astype(np.float32),
                                          step_index=step, domain_id=j,
                                          labels=labels))
            labels_all.append(labels)
            step += 1

    proto_means, _ = _domain_params(spec, 0.0)
    prototypes = ClassPrototypes(prototypes=proto_means.astype(np.float32),
                                 class_names=[f"class_{i}" for i in range(k)],
                                 temperature=spec.temperature)
    ground_truth = GroundTruth(means=gt_means, covariances=gt_covs,
                               priors=gt_priors,
                               labels=np.concatenate(labels_all),
                               batches_per_domain=spec.batches_per_domain,
                               batch_size=spec.batch_size)
    return batches, prototypes, ground_truth


def verify_drift_bound(ground_truth: GroundTruth, budget: float) -> DriftBoundReport:
    """Exact closed-form per-transition KL report; passes iff max <= budget."""
    kls: list[float] = []
    steps: list[int] = []
    for j in range(ground_truth.n_domains - 1):
        per_class = [gaussian_kl(ground_truth.means[j, c], ground_truth.covariances[j, c],
                                 ground_truth.means[j + 1, c], ground_truth.covariances[j + 1, c])
                     for c in range(ground_truth.n_classes)]
        kls.append(float(max(per_class)))
        steps.append((j + 1) * ground_truth.batches_per_domain)
    offending = None
    for kl, s in zip(kls, steps):
        if kl > budget:
            offending = s
            break
    return DriftBoundReport(transition_kls=tuple(kls), boundary_steps=tuple(steps),
                            budget=float(budget), passed=offending is None,
                            offending_step=offending)


def bayes_accuracy(ground_truth: GroundTruth, batches) -> float:
    """Accuracy of the optimal classifier that knows the true per-domain
    parameters; an upper bound for any adaptive pipeline on the same stream."""
    correct = 0
    total = 0
    for batch in batches:
        if batch.labels is None:
            raise DataError("bayes accuracy needs labeled batches")
        j = batch.domain_id
        means = ground_truth.means[j]
        covs = ground_truth.covariances[j]
        priors = ground_truth.priors[j]
        X = batch.features.astype(np.float64)
        scores = np.empty((X.shape[0], ground_truth.n_classes))
        for c in range(ground_truth.n_classes):
            var = covs[c, 0, 0]   # isotropic by construction
            diff = X - means[c]
            scores[:, c] = np.log(priors[c]) - 0.5 * (diff * diff).sum(axis=1) / var \
                - 0.5 * ground_truth.means.shape[2] * np.log(var)
        correct += int((scores.argmax(axis=1) == batch.labels).sum())
        total += batch.labels.shape[0]
    return correct / total


# ---------------------------------------------------------------------------
# Canonical spec factories and the plain-text spec format
# ---------------------------------------------------------------------------

def build_rotation_means(n_classes: int, dim: int, plane: tuple[int, int],
                         in_plane_mass: float, rng: np.random.Generator) -> np.ndarray:
    """Unit class means with a controlled energy split.

    Each mean puts ``in_plane_mass`` of its norm on the rotation plane (on an
    evenly spaced circle with a small angular jitter) and the rest on a
    random direction in the orthogonal coordinates, so rotation drift
    degrades a frozen scorer without collapsing class separation.
    """
    if dim < 3:
        raise ConfigError("rotation streams need dim >= 3")
    if not 0.0 < in_plane_mass < 1.0:
        raise ConfigError("in-plane mass must lie in (0, 1)")
    p, q = plane
    rest = [i for i in range(dim) if i not in (p, q)]
    means = np.zeros((n_classes, dim))
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    angles = angles + rng.uniform(-0.25, 0.25, size=n_classes) * (2.0 * np.pi / n_classes)
    out_mass = np.sqrt(1.0 - in_plane_mass ** 2)
    for k in range(n_classes):
        means[k, p] = in_plane_mass * np.cos(angles[k])
        means[k, q] = in_plane_mass * np.sin(angles[k])
        v = rng.standard_normal(len(rest))
        means[k, rest] = out_mass * v / np.linalg.norm(v)
    return means


def random_unit_means(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n_classes, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def rotation_benchmark_spec(seed: int = 0, n_classes: int = 10, dim: int = 32,
                            domains: int = 9, batches_per_domain: int = 5,
                            batch_size: int = 128, total_degrees: float = 80.0,
                            covariance_scale: float = 0.025,
                            in_plane_mass: float = 0.85,
                            kl_budget: float = DEFAULT_KL_BUDGET,
                            class_scale_spread: float = 0.0) -> DriftSpec:
    """The canonical drifting benchmark: K classes rotating through
    ``total_degrees`` in the (0, 1) plane across ``domains`` domains."""
    plane = (0, 1)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD81F)))
    means = build_rotation_means(n_classes, dim, plane, in_plane_mass, rng)
    return DriftSpec(n_classes=n_classes, dim=dim, class_means=means,
                     covariance_scale=covariance_scale,
                     trajectory=RotationDrift(plane=plane, total_degrees=total_degrees),
                     domains=domains, batches_per_domain=batches_per_domain,
                     batch_size=batch_size, kl_budget=kl_budget, seed=seed,
                     class_scale_spread=class_scale_spread)


_REQUIRED_KEYS = ("kind", "classes", "dim", "domains", "batches_per_domain",
                  "batch_size", "kl_budget", "seed", "covariance_scale")


def parse_spec_text(text: str) -> DriftSpec:
    """Parse the plain-text key=value spec format (see format_spec_text)."""
    fields: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"spec line {ln}: expected key=value")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    missing = [k for k in _REQUIRED_KEYS if k not in fields]
    if missing:
        raise ConfigError(f"spec is missing keys: {', '.join(missing)}")
    try:
        kind = fields["kind"]
        n_classes = int(fields["classes"])
        dim = int(fields["dim"])
        domains = int(fields["domains"])
        batches_per_domain = int(fields["batches_per_domain"])
        batch_size = int(fields["batch_size"])
        kl_budget = float(fields["kl_budget"])
        seed = int(fields["seed"])
        covariance_scale = float(fields["covariance_scale"])
        class_scale_spread = float(fields.get("class_scale_spread", "0"))
        temperature = float(fields.get("temperature", "0.01"))
    except ValueError as exc:
        raise ConfigError(f"bad spec value: {exc}") from None

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD81F)))
    if kind == "rotation":
        plane_txt = fields.get("rotation_plane", "0,1")
        try:
            p, q = (int(x) for x in plane_txt.split(","))
        except ValueError:
            raise ConfigError("rotation_plane must be two comma-separated indices") from None
        total_degrees = float(fields.get("total_degrees", "80"))
        in_plane_mass = float(fields.get("in_plane_mass", "0.85"))
        means = build_rotation_means(n_classes, dim, (p, q), in_plane_mass, rng)
        trajectory: Trajectory = RotationDrift(plane=(p, q), total_degrees=total_degrees)
    elif kind == "mean_translation":
        axis = int(fields.get("direction_axis", "0"))
        if not 0 <= axis < dim:
            raise ConfigError("direction_axis out of range")
        direction = np.zeros(dim)
        direction[axis] = 1.0
        means = random_unit_means(n_classes, dim, rng)
        trajectory = TranslationDrift(direction=direction,
                                      magnitude=float(fields.get("magnitude", "1")))
    elif kind == "covariance_inflation":
        means = random_unit_means(n_classes, dim, rng)
        trajectory = CovarianceInflation(start_scale=float(fields.get("start_scale", "1")),
                                         end_scale=float(fields.get("end_scale", "2")))
    else:
        raise ConfigError(f"unknown trajectory kind '{kind}'")
    return DriftSpec(n_classes=n_classes, dim=dim, class_means=means,
                     covariance_scale=covariance_scale, trajectory=trajectory,
                     domains=domains, batches_per_domain=batches_per_domain,
                     batch_size=batch_size, kl_budget=kl_budget, seed=seed,
                     class_scale_spread=class_scale_spread, temperature=temperature)


def format_spec_text(spec: DriftSpec, in_plane_mass: float | None = None) -> str:
    """Serialize the generation parameters (means are re-derived from seed)."""
    lines = [
        f"kind={spec.trajectory.kind}",
        f"classes={spec.n_classes}",
        f"dim={spec.dim}",
        f"domains={spec.domains}",
        f"batches_per_domain={spec.batches_per_domain}",
        f"batch_size={spec.batch_size}",
        f"kl_budget={spec.kl_budget!r}",
        f"seed={spec.seed}",
        f"covariance_scale={spec.covariance_scale!r}",
        f"class_scale_spread={spec.class_scale_spread!r}",
        f"temperature={spec.temperature!r}",
    ]
    traj = spec.trajectory
    if isinstance(traj, RotationDrift):
        lines.append(f"rotation_plane={traj.plane[0]},{traj.plane[1]}")
        lines.append(f"total_degrees={traj.total_degrees!r}")
        if in_plane_mass is not None:
            lines.append(f"in_plane_mass={in_plane_mass!r}")
    elif isinstance(traj, TranslationDrift):
        axis = int(np.argmax(np.abs(np.asarray(traj.direction))))
        lines.append(f"direction_axis={axis}")
        lines.append(f"magnitude={traj.magnitude!r}")
    elif isinstance(traj, CovarianceInflation):
        lines.append(f"start_scale={traj.start_scale!r}")
        lines.append(f"end_scale={traj.end_scale!r}")
    return "\n".join(lines) + "\n"
