"""Binary persistence formats and the synthetic Gaussian dataset generator.

Embedding files (magic ``XEMB``) hold float32 row-major embeddings followed
by uint32 labels, so the embedding block maps directly as a contiguous
matrix.  Model checkpoints (magic ``XMDL``) hold the full float64 state.
Both formats are little-endian, versioned, and round-trip bit-exactly.

XEMB layout (all little-endian):

    magic       4 bytes  b"XEMB"
    version     u32      currently 1
    n_samples   u64
    dim         u32
    num_classes u32
    dtype_code  u8       0 = float32
    payload     n_samples * dim float32 embeddings, row-major
    labels      n_samples uint32

XMDL layout:

    magic       4 bytes  b"XMDL"
    version     u32      currently 1
    dim         u32
    num_classes u32
    step        u64
    cov_mode    u8       0 = plastic, 1 = fixed
    train_mode  u8       0 = both, 1 = mu only, 2 = sigma only, 3 = frozen
    beta        f64
    counts      num_classes int64
    means       num_classes * dim float64
    sigma       dim * dim float64

The synthetic generator draws class means from an isotropic Gaussian and
samples from a shared within-class covariance (identity or a random SPD
matrix), which keeps the Bayes-optimal accuracy computable: it is estimated
by Monte-Carlo evaluation of the true-parameter classifier on the held-out
split and recorded in a plain-text manifest next to the files.
"""

from __future__ import annotations

import enum
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import scipy.linalg

from .core import (
    BadMagic,
    ClassStats,
    CovarianceMode,
    DimensionMismatch,
    InvalidSpec,
    LabeledBatch,
    LabelOutOfRange,
    LdaModel,
    SharedCovariance,
    TrainMode,
    TruncatedPayload,
    UnsupportedVersion,
)

XEMB_MAGIC = b"XEMB"
XMDL_MAGIC = b"XMDL"
XEMB_VERSION = 1
XMDL_VERSION = 1
_XEMB_HEADER = struct.Struct("<4sIQIIB")
_XMDL_HEADER = struct.Struct("<4sIIIQBBd")
_DTYPE_FLOAT32 = 0

_COV_CODES = {CovarianceMode.PLASTIC: 0, CovarianceMode.FIXED: 1}
_TRAIN_CODES = {
    TrainMode.TRAIN_BOTH: 0,
    TrainMode.TRAIN_MU_ONLY: 1,
    TrainMode.TRAIN_SIGMA_ONLY: 2,
    TrainMode.FROZEN: 3,
}
_COV_FROM_CODE = {v: k for k, v in _COV_CODES.items()}
_TRAIN_FROM_CODE = {v: k for k, v in _TRAIN_CODES.items()}


@dataclass(frozen=True)
class EmbeddingFileHeader:
    version: int
    n_samples: int
    dim: int
    num_classes: int
    dtype_code: int

    @property
    def embeddings_bytes(self) -> int:
        return self.n_samples * self.dim * 4

    @property
    def labels_offset(self) -> int:
        return _XEMB_HEADER.size + self.embeddings_bytes

    @property
    def expected_file_size(self) -> int:
        return self.labels_offset + self.n_samples * 4


# ---------------------------------------------------------------------------
# XEMB embedding files.
# ---------------------------------------------------------------------------


def write_embedding_file(path: str | Path, embeddings: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
    embeddings = np.ascontiguousarray(embeddings, dtype="<f4")
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or labels.ndim != 1 or embeddings.shape[0] != labels.shape[0]:
        raise DimensionMismatch(
            f"inconsistent shapes: embeddings {embeddings.shape}, labels {labels.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelOutOfRange(f"labels outside [0, {num_classes})")
    header = _XEMB_HEADER.pack(
        XEMB_MAGIC,
        XEMB_VERSION,
        embeddings.shape[0],
        embeddings.shape[1],
        num_classes,
        _DTYPE_FLOAT32,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(embeddings.tobytes())
        f.write(labels.astype("<u4").tobytes())


def read_embedding_header(path: str | Path) -> EmbeddingFileHeader:
    with open(path, "rb") as f:
        raw = f.read(_XEMB_HEADER.size)
    if len(raw) < _XEMB_HEADER.size:
        raise TruncatedPayload(f"{path}: file shorter than header")
    magic, version, n_samples, dim, num_classes, dtype_code = _XEMB_HEADER.unpack(raw)
    if magic != XEMB_MAGIC:
        raise BadMagic(f"{path}: expected {XEMB_MAGIC!r}, found {magic!r}")
    if version != XEMB_VERSION:
        raise UnsupportedVersion(f"{path}: embedding file version {version}")
    if dtype_code != _DTYPE_FLOAT32:
        raise UnsupportedVersion(f"{path}: unknown dtype code {dtype_code}")
    header = EmbeddingFileHeader(version, n_samples, dim, num_classes, dtype_code)
    actual = os.path.getsize(path)
    if actual != header.expected_file_size:
        raise TruncatedPayload(
            f"{path}: expected {header.expected_file_size} bytes, found {actual}"
        )
    return header


def stream_embedding_batches(path: str | Path, batch_size: int) -> Iterator[LabeledBatch]:
    """Yield the file's rows in order, ``batch_size`` rows at a time.

    Only one batch is resident at a time, so files larger than memory stream
    fine.  Embeddings come back as float32 exactly as stored; training ops
    widen them on ingestion.
    """
    if batch_size < 1:
        raise InvalidSpec(f"batch_size must be >= 1, got {batch_size}")
    header = read_embedding_header(path)
    row_bytes = header.dim * 4
    with open(path, "rb") as f:
        for start in range(0, header.n_samples, batch_size):
            rows = min(batch_size, header.n_samples - start)
            f.seek(_XEMB_HEADER.size + start * row_bytes)
            block = f.read(rows * row_bytes)
            if len(block) != rows * row_bytes:
                raise TruncatedPayload(f"{path}: short read in embedding block")
            embeddings = np.frombuffer(block, dtype="<f4").reshape(rows, header.dim)
            f.seek(header.labels_offset + start * 4)
            block = f.read(rows * 4)
            if len(block) != rows * 4:
                raise TruncatedPayload(f"{path}: short read in label block")
            labels = np.frombuffer(block, dtype="<u4").astype(np.int64)
            yield LabeledBatch(embeddings=embeddings, labels=labels)


def read_embedding_file(path: str | Path) -> tuple[EmbeddingFileHeader, LabeledBatch]:
    """Load a whole embedding file into one batch."""
    header = read_embedding_header(path)
    batches = list(stream_embedding_batches(path, max(1, header.n_samples)))
    if not batches:
        empty = LabeledBatch(
            embeddings=np.empty((0, header.dim), dtype=np.float32),
            labels=np.empty(0, dtype=np.int64),
        )
        return header, empty
    return header, batches[0]


# ---------------------------------------------------------------------------
# XMDL model checkpoints.
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: LdaModel, beta: float) -> None:
    header = _XMDL_HEADER.pack(
        XMDL_MAGIC,
        XMDL_VERSION,
        model.dim,
        model.num_classes,
        model.covariance.step,
        _COV_CODES[model.covariance.mode],
        _TRAIN_CODES[model.train_mode],
        beta,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(model.stats.counts.astype("<i8").tobytes())
        f.write(np.ascontiguousarray(model.stats.means, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.covariance.sigma, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[LdaModel, float]:
    """Restore a checkpoint bit-exactly; returns (model, beta)."""
    with open(path, "rb") as f:
        raw = f.read(_XMDL_HEADER.size)
        if len(raw) < _XMDL_HEADER.size:
            raise TruncatedPayload(f"{path}: file shorter than header")
        magic, version, dim, num_classes, step, cov_code, train_code, beta = _XMDL_HEADER.unpack(raw)
        if magic != XMDL_MAGIC:
            raise BadMagic(f"{path}: expected {XMDL_MAGIC!r}, found {magic!r}")
        if version != XMDL_VERSION:
            raise UnsupportedVersion(f"{path}: checkpoint version {version}")
        if cov_code not in _COV_FROM_CODE or train_code not in _TRAIN_FROM_CODE:
            raise UnsupportedVersion(f"{path}: unknown mode codes ({cov_code}, {train_code})")
        body = f.read()
    expected = num_classes * 8 + num_classes * dim * 8 + dim * dim * 8
    if len(body) != expected:
        raise TruncatedPayload(f"{path}: expected {expected} body bytes, found {len(body)}")
    counts_end = num_classes * 8
    means_end = counts_end + num_classes * dim * 8
    counts = np.frombuffer(body[:counts_end], dtype="<i8").astype(np.int64)
    means = np.frombuffer(body[counts_end:means_end], dtype="<f8").reshape(num_classes, dim).copy()
    sigma = np.frombuffer(body[means_end:], dtype="<f8").reshape(dim, dim).copy()
    model = LdaModel(
        stats=ClassStats(means=means, counts=counts),
        covariance=SharedCovariance(sigma=sigma, step=step, mode=_COV_FROM_CODE[cov_code]),
        dim=dim,
        num_classes=num_classes,
        train_mode=_TRAIN_FROM_CODE[train_code],
    )
    return model, beta


# ---------------------------------------------------------------------------
# Synthetic Gaussian data with a known Bayes-optimal accuracy.
# ---------------------------------------------------------------------------


class CovarianceShape(str, enum.Enum):
    IDENTITY = "identity"
    RANDOM_SPD = "spd"


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a labeled Gaussian mixture with one shared covariance.

    Class means are drawn from N(0, mean_scale^2 * I); samples from
    N(mean_k, Q) with Q either the identity or a random SPD matrix shared by
    all classes.  Labels are balanced and generation is deterministic per
    seed.
    """

    num_classes: int
    dim: int
    samples_per_class: int
    mean_scale: float
    covariance: CovarianceShape = CovarianceShape.IDENTITY
    seed: int = 0
    val_samples_per_class: int = 2

    def validate(self) -> "SyntheticSpec":
        if self.num_classes < 1 or self.dim < 1:
            raise InvalidSpec(f"need positive class count and dim, got {self}")
        if self.samples_per_class < 0 or self.val_samples_per_class < 0:
            raise InvalidSpec("sample counts must be nonnegative")
        if not (np.isfinite(self.mean_scale) and self.mean_scale >= 0):
            raise InvalidSpec(f"mean_scale must be finite and >= 0, got {self.mean_scale}")
        return self


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    true_means: np.ndarray  # (n, d)
    true_cov: np.ndarray  # (d, d)
    train: LabeledBatch
    val: LabeledBatch
    bayes_accuracy: float | None


def _random_spd(dim: int, rng: np.random.Generator) -> np.ndarray:
    # Wishart-style draw with a small ridge: anisotropic but comfortably SPD.
    a = rng.standard_normal((dim, dim))
    return (a @ a.T) / dim + 0.05 * np.eye(dim)


def _draw_split(
    means: np.ndarray,
    chol: np.ndarray | None,
    per_class: int,
    rng: np.random.Generator,
) -> LabeledBatch:
    n, d = means.shape
    labels = np.repeat(np.arange(n, dtype=np.int64), per_class)
    rng.shuffle(labels)
    noise = rng.standard_normal((labels.size, d))
    if chol is not None:
        noise = noise @ chol.T
    return LabeledBatch(embeddings=means[labels] + noise, labels=labels)


def bayes_rule_accuracy(
    means: np.ndarray,
    cov: np.ndarray,
    batch: LabeledBatch,
    chunk_rows: int = 2048,
) -> float:
    """Accuracy of the true-parameter classifier (equal priors) on a batch."""
    weights = scipy.linalg.cho_solve(scipy.linalg.cho_factor(cov, lower=True), means.T).T
    bias = -0.5 * np.einsum("ij,ij->i", means, weights)
    hits = 0
    x = np.asarray(batch.embeddings, dtype=np.float64)
    for start in range(0, len(batch), chunk_rows):
        block = x[start : start + chunk_rows]
        pred = np.argmax(block @ weights.T + bias, axis=1)
        hits += int(np.sum(pred == batch.labels[start : start + chunk_rows]))
    return hits / len(batch) if len(batch) else 0.0


def generate_synthetic(spec: SyntheticSpec, compute_bayes: bool = True) -> SyntheticDataset:
    """Draw train and held-out splits following the recipe.

    The Bayes accuracy estimate is the Monte-Carlo accuracy of the
    true-parameter classifier on the held-out split.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.num_classes, spec.dim)) * spec.mean_scale
    if CovarianceShape(spec.covariance) is CovarianceShape.RANDOM_SPD:
        cov = _random_spd(spec.dim, rng)
        chol = np.linalg.cholesky(cov)
    else:
        cov = np.eye(spec.dim)
        chol = None
    train = _draw_split(means, chol, spec.samples_per_class, rng)
    val = _draw_split(means, chol, spec.val_samples_per_class, rng)
    bayes = bayes_rule_accuracy(means, cov, val) if compute_bayes and len(val) else None
    return SyntheticDataset(
        spec=spec, true_means=means, true_cov=cov, train=train, val=val, bayes_accuracy=bayes
    )


def synthetic_companion_paths(path: str | Path) -> tuple[Path, Path]:
    """(validation file, manifest file) paths for a train file path."""
    path = Path(path)
    return path.with_suffix(".val.xemb"), path.with_suffix(".manifest.json")


def write_synthetic_files(dataset: SyntheticDataset, path: str | Path) -> dict:
    """Write train/val embedding files plus the manifest; returns the manifest."""
    path = Path(path)
    val_path, manifest_path = synthetic_companion_paths(path)
    n = dataset.spec.num_classes
    write_embedding_file(path, dataset.train.embeddings, dataset.train.labels, n)
    write_embedding_file(val_path, dataset.val.embeddings, dataset.val.labels, n)
    spec_dict = asdict(dataset.spec)
    spec_dict["covariance"] = CovarianceShape(dataset.spec.covariance).value
    manifest = {
        "spec": spec_dict,
        "bayes_accuracy": dataset.bayes_accuracy,
        "train_file": path.name,
        "val_file": val_path.name,
        "train_samples": len(dataset.train),
        "val_samples": len(dataset.val),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
