"""On-disk embedding stream format and sequential batch access.

A stream directory holds:

  manifest.txt        plain text; ``version=1``, ``dim=<D>``, ``classes=<K>``,
                      one ``domain <id> batches=<n> samples=<m>`` line per
                      domain in stream order, then optional ``temperature=``
                      and ``class <k> <name>`` lines
  prototypes.bin      magic ``GDAP``, u32 K, u32 D, K*D little-endian f32
  batch_<t>.bin       magic ``GDAB``, u32 t, u32 domain_id, u32 N, u32 D,
                      N*D little-endian f32
  batch_<t>.labels    optional sidecar, N little-endian u32

Features are stored exactly as produced (no normalization) and round-trip
bit-exactly: batches carry float32 in memory as well as on disk. Labels live
in separate sidecar files so an adaptation run can be executed with labels
physically absent.

Reading is single-pass and keeps one batch in memory at a time. A reader is
immutable after open and may be shared across threads; writers own their
directory exclusively.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, StreamFormatError

FORMAT_VERSION = 1
PROTO_MAGIC = b"GDAP"
BATCH_MAGIC = b"GDAB"
DEFAULT_TEMPERATURE = 0.01

_BATCH_FILE_RE = re.compile(r"^batch_(\d+)\.bin$")


@dataclass
class EmbeddingBatch:
    """One timestep's matrix of embeddings plus its stream position."""

    features: np.ndarray          # (N, D) float32
    step_index: int
    domain_id: int
    labels: np.ndarray | None = None   # (N,) uint32, evaluation only

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float32))
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataError("batch features must be a non-empty N x D matrix")
        if not np.all(np.isfinite(feats)):
            raise DataError("non-finite feature")
        if self.step_index < 0 or self.domain_id < 0:
            raise DataError("step_index and domain_id must be non-negative")
        self.features = feats
        if self.labels is not None:
            labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.uint32))
            if labels.shape != (feats.shape[0],):
                raise DataError("labels must be one class index per sample")
            self.labels = labels

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClassPrototypes:
    """Fixed per-class scoring vectors plus the softmax temperature."""

    prototypes: np.ndarray        # (K, D) float32
    class_names: list[str]
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        protos = np.ascontiguousarray(np.asarray(self.prototypes, dtype=np.float32))
        if protos.ndim != 2 or protos.shape[0] < 2:
            raise DataError("need at least 2 prototype rows")
        if not np.all(np.isfinite(protos)):
            raise DataError("non-finite prototype")
        norms = np.linalg.norm(protos.astype(np.float64), axis=1)
        if np.any(norms <= 0.0):
            raise DataError("prototype row with zero norm")
        if len(self.class_names) != protos.shape[0]:
            raise DataError("one class name per prototype row required")
        if not self.temperature > 0.0:
            raise DataError("temperature must be positive")
        self.prototypes = protos

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass(frozen=True)
class StreamManifest:
    """Declared shape of a stream: dimensions plus per-domain batch counts."""

    dim: int
    n_classes: int
    domains: tuple[tuple[int, int, int], ...]   # (domain_id, batches, samples)
    version: int = FORMAT_VERSION

    @property
    def total_batches(self) -> int:
        return sum(n for _, n, _ in self.domains)

    @property
    def total_samples(self) -> int:
        return sum(m for _, _, m in self.domains)


def write_stream(batches: Sequence[EmbeddingBatch], prototypes: ClassPrototypes,
                 path) -> StreamManifest:
    """Write a full stream directory; returns the manifest that was written."""
    batches = list(batches)
    if not batches:
        raise DataError("empty stream")
    dim = prototypes.dim
    prev_step = -1
    domains: list[list[int]] = []   # [domain_id, batches, samples]
    for b in batches:
        if b.dim != dim:
            raise DataError(
                f"dimension mismatch: batch {b.step_index} has D={b.dim}, prototypes D={dim}")
        if b.step_index <= prev_step:
            raise DataError(f"non-monotonic step_index at {b.step_index}")
        prev_step = b.step_index
        if b.labels is not None and np.any(b.labels >= prototypes.n_classes):
            raise DataError(f"label out of range in batch {b.step_index}")
        if domains and domains[-1][0] == b.domain_id:
            domains[-1][1] += 1
            domains[-1][2] += b.size
        else:
            if any(d[0] == b.domain_id for d in domains):
                raise DataError(f"domain {b.domain_id} appears in non-contiguous segments")
            domains.append([b.domain_id, 1, b.size])

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "prototypes.bin", "wb") as fh:
        fh.write(PROTO_MAGIC)
        fh.write(struct.pack("<II", prototypes.n_classes, dim))
        fh.write(prototypes.prototypes.astype("<f4").tobytes())

    for b in batches:
        with open(out / f"batch_{b.step_index}.bin", "wb") as fh:
            fh.write(BATCH_MAGIC)
            fh.write(struct.pack("<IIII", b.step_index, b.domain_id, b.size, b.dim))
            fh.write(b.features.astype("<f4").tobytes())
        label_path = out / f"batch_{b.step_index}.labels"
        if b.labels is not None:
            with open(label_path, "wb") as fh:
                fh.write(b.labels.astype("<u4").tobytes())
        elif label_path.exists():
            label_path.unlink()

    manifest = StreamManifest(dim=dim, n_classes=prototypes.n_classes,
                              domains=tuple(tuple(d) for d in domains))
    lines = [f"version={manifest.version}", f"dim={manifest.dim}",
             f"classes={manifest.n_classes}"]
    lines += [f"domain {d} batches={n} samples={m}" for d, n, m in manifest.domains]
    lines.append(f"temperature={prototypes.temperature!r}")
    lines += [f"class {k} {name}" for k, name in enumerate(prototypes.class_names)]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return manifest


def _parse_manifest(path: Path) -> tuple[StreamManifest, float, list[str] | None]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise StreamFormatError(f"missing manifest: {path}") from None
    fields: dict[str, str] = {}
    domains: list[tuple[int, int, int]] = []
    names: dict[int, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("domain "):
            m = re.match(r"^domain (\d+) batches=(\d+) samples=(\d+)$", line)
            if not m:
                raise StreamFormatError(f"manifest line {ln}: bad domain entry")
            domains.append((int(m.group(1)), int(m.group(2)), int(m.group(3))))
        elif line.startswith("class "):
            m = re.match(r"^class (\d+) (.*)$", line)
            if not m:
                raise StreamFormatError(f"manifest line {ln}: bad class entry")
            names[int(m.group(1))] = m.group(2)
        elif "=" in line:
            key, _, value = line.partition("=")
            if key not in ("version", "dim", "classes", "temperature"):
                raise StreamFormatError(f"manifest line {ln}: unknown key '{key}'")
            fields[key] = value
        else:
            raise StreamFormatError(f"manifest line {ln}: unparseable")
    try:
        version = int(fields["version"])
        dim = int(fields["dim"])
        n_classes = int(fields["classes"])
    except (KeyError, ValueError) as exc:
        raise StreamFormatError(f"manifest missing required field: {exc}") from None
    if version != FORMAT_VERSION:
        raise StreamFormatError(f"version mismatch: got {version}, expected {FORMAT_VERSION}")
    if not domains:
        raise StreamFormatError("manifest lists no domains")
    temperature = float(fields.get("temperature", DEFAULT_TEMPERATURE))
    class_names = None
    if names:
        if sorted(names) != list(range(n_classes)):
            raise StreamFormatError("manifest class names do not cover 0..K-1")
        class_names = [names[k] for k in range(n_classes)]
    manifest = StreamManifest(dim=dim, n_classes=n_classes, domains=tuple(domains))
    return manifest, temperature, class_names


def _read_prototypes(path: Path, manifest: StreamManifest, temperature: float,
                     class_names: list[str] | None) -> ClassPrototypes:
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise StreamFormatError(f"missing prototype file: {path}") from None
    if blob[:4] != PROTO_MAGIC:
        raise StreamFormatError("unrecognized format: bad prototype magic")
    if len(blob) < 12:
        raise StreamFormatError("truncated prototype file")
    k, d = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * k * d
    if len(blob) != expected:
        raise StreamFormatError(
            f"truncated prototype file: {len(blob)} bytes, expected {expected}")
    if k != manifest.n_classes or d != manifest.dim:
        raise StreamFormatError(
            f"manifest/prototype mismatch: manifest K={manifest.n_classes} D={manifest.dim}, "
            f"file K={k} D={d}")
    matrix = np.frombuffer(blob, dtype="<f4", count=k * d, offset=12).reshape(k, d)
    if class_names is None:
        class_names = [f"class_{i}" for i in range(k)]
    return ClassPrototypes(prototypes=matrix.copy(), class_names=class_names,
                           temperature=temperature)


def _read_batch(path: Path, manifest: StreamManifest) -> EmbeddingBatch:
    blob = path.read_bytes()
    if blob[:4] != BATCH_MAGIC:
        raise StreamFormatError(f"unrecognized format: bad batch magic in {path.name}")
    if len(blob) < 20:
        raise StreamFormatError(f"truncated batch file {path.name}")
    step, domain_id, n, d = struct.unpack_from("<IIII", blob, 4)
    m = _BATCH_FILE_RE.match(path.name)
    if m and int(m.group(1)) != step:
        raise StreamFormatError(f"{path.name}: header step {step} disagrees with filename")
    expected = 20 + 4 * n * d
    if len(blob) != expected:
        raise StreamFormatError(
            f"truncated batch file {path.name}: {len(blob)} bytes, expected {expected}")
    if d != manifest.dim:
        raise StreamFormatError(
            f"{path.name}: dimension {d} disagrees with manifest dim {manifest.dim}")
    feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=20).reshape(n, d)
    if not np.all(np.isfinite(feats)):
        raise StreamFormatError(f"{path.name}: non-finite feature")
    labels = None
    label_path = path.with_suffix(".labels")
    if label_path.exists():
        lab = label_path.read_bytes()
        if len(lab) != 4 * n:
            raise StreamFormatError(
                f"{label_path.name}: {len(lab)} bytes, expected {4 * n}")
        labels = np.frombuffer(lab, dtype="<u4").copy()
        if np.any(labels >= manifest.n_classes):
            raise StreamFormatError(f"{label_path.name}: label out of range")
    return EmbeddingBatch(features=feats.copy(), step_index=step,
                          domain_id=domain_id, labels=labels)


@dataclass(frozen=True)
class _BatchSequence:
    """Re-iterable lazy view over a stream's batch files, one batch in memory."""

    directory: Path
    manifest: StreamManifest
    files: tuple[Path, ...] = field(default=())

    def __iter__(self) -> Iterator[EmbeddingBatch]:
        prev_step = -1
        domain_seen: list[tuple[int, int, int]] = []
        for f in self.files:
            batch = _read_batch(f, self.manifest)
            if batch.step_index <= prev_step:
                raise StreamFormatError(f"non-monotonic step_index at {batch.step_index}")
            prev_step = batch.step_index
            if domain_seen and domain_seen[-1][0] == batch.domain_id:
                d, n, m = domain_seen[-1]
                domain_seen[-1] = (d, n + 1, m + batch.size)
            else:
                domain_seen.append((batch.domain_id, 1, batch.size))
            yield batch
        if tuple(domain_seen) != self.manifest.domains:
            raise StreamFormatError(
                "stream content disagrees with manifest domain table: "
                f"read {domain_seen}, declared {list(self.manifest.domains)}")

    def __len__(self) -> int:
        return len(self.files)


def read_stream(path) -> tuple[StreamManifest, _BatchSequence, ClassPrototypes]:
    """Open a stream directory.

    Returns the manifest, a lazily evaluated batch sequence (iterate it to
    stream batches off disk one at a time), and the prototypes.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"stream directory not found: {root}")
    manifest, temperature, class_names = _parse_manifest(root / "manifest.txt")
    prototypes = _read_prototypes(root / "prototypes.bin", manifest, temperature,
                                  class_names)
    files = sorted((f for f in root.iterdir() if _BATCH_FILE_RE.match(f.name)),
                   key=lambda f: int(_BATCH_FILE_RE.match(f.name).group(1)))
    if len(files) != manifest.total_batches:
        raise StreamFormatError(
            f"manifest declares {manifest.total_batches} batches, found {len(files)} files")
    return manifest, _BatchSequence(root, manifest, tuple(files)), prototypes
