"""Sub-linear inference: shortlist the nearest class means, score only those.

The index hashes every live class mean with random-hyperplane signatures
(``bits`` sign bits per table, ``tables`` independent tables).  A query
probes each table's bucket plus all buckets within Hamming distance
``probes`` of its signature, unions the candidates, and re-ranks them by
exact Euclidean distance to pick the ``k`` nearest means.  Re-ranking makes
candidate-generation recall the only approximation: a shortlisted class
always receives exactly the logit the full scoring pass would give it.

If probing surfaces fewer than ``k`` candidates the query falls back to an
exact scan over all live means, so latency degrades but correctness never
does.  The built index is immutable; rebuilding is the supported path after
the class means move.
"""

from __future__ import annotations

import itertools
import json
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DimensionMismatch,
    InvalidSpec,
    LdaModel,
    NoLiveClasses,
    StaleIndex,
    require_embedding,
)
from .slda import DEFAULT_BETA, TranslatedModel, predict_exact, score_rows, translate


@dataclass(frozen=True)
class AnnConfig:
    """Shortlisting parameters.

    ``k`` is the number of active classes per query; None means one tenth of
    the class count.  ``inactive_fill`` is the logit assigned to classes
    outside the shortlist (0 by default; -inf masks them out entirely, which
    avoids an inactive class outranking active classes with negative logits).
    """

    k: int | None = None
    tables: int = 16
    bits: int = 12
    probes: int = 2
    inactive_fill: float = 0.0

    def validate(self) -> "AnnConfig":
        if self.tables < 1 or self.bits < 1 or self.probes < 0:
            raise InvalidSpec(f"bad ANN config {self}")
        if self.k is not None and self.k < 1:
            raise InvalidSpec(f"k must be positive, got {self.k}")
        return self


def default_active_count(num_classes: int) -> int:
    """One tenth of the class count, the conventional shortlist size."""
    return max(1, num_classes // 10)


@dataclass
class AnnIndex:
    """Immutable LSH index over the live class means of one model state.

    The hash tables are stored as one flat directory: each non-empty
    (table, signature) bucket contributes one entry of ``bucket_keys``
    (``key = table << bits | signature``, ascending) and its members occupy
    the slice ``members[bucket_starts[i]:bucket_starts[i + 1]]``.  A query
    resolves all its probes with one vectorized binary search over the
    directory instead of thousands of per-bucket dictionary hits.
    """

    config: AnnConfig
    seed: int
    dim: int
    num_classes: int
    class_ids: np.ndarray  # (L,) live class ids, ascending
    means: np.ndarray  # (L, d) snapshot of live means for exact re-ranking
    mean_sq: np.ndarray  # (L,) squared norms of the stored means
    planes: np.ndarray  # (tables * bits, d) hyperplane normals
    bucket_keys: np.ndarray  # unique table << bits | signature, ascending
    bucket_starts: np.ndarray  # offsets into members, len(bucket_keys) + 1
    members: np.ndarray  # (L * tables,) local ids grouped by bucket
    probe_masks: np.ndarray  # (num_probes,) XOR masks, radius <= probes
    source_marker: tuple[int, int]

    @property
    def num_live(self) -> int:
        return self.class_ids.shape[0]

    def is_stale(self, model: LdaModel) -> bool:
        return self.source_marker != model.snapshot_marker()

    def signatures(self, x: np.ndarray) -> np.ndarray:
        """Per-table signature ints for one query vector."""
        proj = score_rows(self.planes, x, np.arange(self.planes.shape[0], dtype=np.int64))
        bits = (proj >= 0.0).reshape(self.config.tables, self.config.bits)
        weights = 1 << np.arange(self.config.bits, dtype=np.int64)
        return bits @ weights

    def bucket_members(self, table: int, signature: int) -> np.ndarray:
        """Local ids hashed to one (table, signature) bucket."""
        key = (table << self.config.bits) | signature
        pos = int(np.searchsorted(self.bucket_keys, key))
        if pos == self.bucket_keys.shape[0] or self.bucket_keys[pos] != key:
            return np.empty(0, dtype=np.int64)
        return self.members[self.bucket_starts[pos] : self.bucket_starts[pos + 1]]

    def probe_candidates(self, x: np.ndarray) -> np.ndarray:
        """Union of all probed buckets across tables (local indices)."""
        sigs = self.signatures(x)
        table_offsets = np.arange(self.config.tables, dtype=np.int64) << self.config.bits
        targets = ((sigs ^ self.probe_masks[:, None]) + table_offsets).ravel()
        pos = np.searchsorted(self.bucket_keys, targets)
        pos[pos == self.bucket_keys.shape[0]] = 0  # sentinel; filtered below
        hit = self.bucket_keys[pos] == targets
        if not hit.any():
            return np.empty(0, dtype=np.int64)
        pos = pos[hit]
        starts = self.bucket_starts[pos]
        lengths = self.bucket_starts[pos + 1] - starts
        # Flatten the [start, start+len) ranges without a Python loop.
        ends = np.cumsum(lengths)
        flat = np.arange(ends[-1]) + np.repeat(starts - (ends - lengths), lengths)
        return np.unique(self.members[flat])

    def shortlist(self, x: np.ndarray, k: int) -> np.ndarray:
        """Local indices of the k nearest stored means (exact re-ranking)."""
        candidates = self.probe_candidates(x)

        if candidates.shape[0] < k:
            # Too few survivors: exact scan keeps the contract honest.
            candidates = np.arange(self.num_live, dtype=np.int64)
        scores = self.mean_sq[candidates] - 2.0 * score_rows(self.means, x, candidates)

        if k >= candidates.shape[0]:
            return candidates
        top = np.argpartition(scores, k - 1)[:k]
        return candidates[top]


def build_index(model: LdaModel, config: AnnConfig, seed: int = 0) -> AnnIndex:
    """Hash every live class mean into ``config.tables`` signature tables.

    Deterministic for a fixed seed and model state.
    """
    config.validate()
    live = np.flatnonzero(model.stats.live_mask)
    if live.size == 0:
        raise NoLiveClasses("cannot index a model with no trained classes")

    means = np.ascontiguousarray(model.stats.means[live], dtype=np.float64)
    rng = np.random.default_rng(seed)
    planes = rng.standard_normal((config.tables * config.bits, model.dim))

    proj = means @ planes.T  # (L, tables * bits)
    bit_matrix = (proj >= 0.0).reshape(live.size, config.tables, config.bits)
    weights = 1 << np.arange(config.bits, dtype=np.int64)
    signatures = bit_matrix @ weights  # (L, tables)

    table_offsets = np.arange(config.tables, dtype=np.int64) << config.bits
    keys = (signatures + table_offsets).ravel()  # (L * tables,)
    locals_ = np.repeat(np.arange(live.size, dtype=np.int64), config.tables)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    bucket_keys, first = np.unique(sorted_keys, return_index=True)
    bucket_starts = np.append(first, sorted_keys.shape[0]).astype(np.int64)

    probe_masks = np.asarray(
        [
            sum(1 << b for b in flipped)
            for radius in range(config.probes + 1)
            for flipped in itertools.combinations(range(config.bits), radius)
        ],
        dtype=np.int64,
    )

    return AnnIndex(
        config=config,
        seed=seed,
        dim=model.dim,
        num_classes=model.num_classes,
        class_ids=live.astype(np.int64),
        means=means,
        mean_sq=np.einsum("ij,ij->i", means, means),
        planes=planes,
        bucket_keys=bucket_keys,
        bucket_starts=bucket_starts,
        members=locals_[order],
        probe_masks=probe_masks,
        source_marker=model.snapshot_marker(),
    )


def query_active(
    index: AnnIndex,
    head: TranslatedModel,
    x: np.ndarray,
    k: int | None = None,
) -> tuple[np.ndarray, int]:
    """Logits with only the k nearest-mean classes scored, plus the argmax.

    Shortlisted classes receive exactly the logits the exact path computes;
    the rest receive the configured inactive fill.  Dead classes stay -inf.
    Raises StaleIndex when the index and head come from different model
    states.
    """
    if index.source_marker != head.source_marker:
        raise StaleIndex("index and translated head were built from different model states")
    x = require_embedding(x, index.dim)
    if k is None:
        k = index.config.k if index.config.k is not None else default_active_count(index.num_classes)
    k = min(max(1, int(k)), index.num_live)

    local = index.shortlist(x, k)
    ids = index.class_ids[np.sort(local)]

    logits = np.full(index.num_classes, index.config.inactive_fill, dtype=np.float64)
    logits[~head.live_mask] = -np.inf
    logits[ids] = score_rows(head.head.weights, x, ids) + head.head.bias[ids]
    return logits, int(np.argmax(logits))


@dataclass
class QueryRecord:
    query_id: int
    path: str  # "exact" or "active"
    nanos: int
    argmax: int

    def to_json(self) -> str:
        return json.dumps(
            {"query": self.query_id, "path": self.path, "ns": self.nanos, "argmax": self.argmax}
        )


@dataclass
class InferenceBenchReport:
    """Per-query latency records for the exact and shortlisted paths."""

    num_classes: int
    k: int
    records: list[QueryRecord] = field(default_factory=list)

    def _nanos(self, path: str) -> list[int]:
        return [r.nanos for r in self.records if r.path == path]

    def path_mean_ns(self, path: str) -> float:
        times = self._nanos(path)
        return statistics.fmean(times) if times else 0.0

    def path_median_ns(self, path: str) -> float:
        times = self._nanos(path)
        return statistics.median(times) if times else 0.0

    @property
    def speedup(self) -> float:
        active = self.path_mean_ns("active")
        return self.path_mean_ns("exact") / active if active else 0.0

    def agreement(self) -> float:
        """Fraction of queries where both paths agree on the argmax."""
        exact = {r.query_id: r.argmax for r in self.records if r.path == "exact"}
        active = [(r.query_id, r.argmax) for r in self.records if r.path == "active"]
        if not active:
            return 0.0
        return sum(exact.get(q) == a for q, a in active) / len(active)

    def summary(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "k": self.k,
            "exact_mean_ns": self.path_mean_ns("exact"),
            "exact_median_ns": self.path_median_ns("exact"),
            "active_mean_ns": self.path_mean_ns("active"),
            "active_median_ns": self.path_median_ns("active"),
            "speedup": self.speedup,
            "argmax_agreement": self.agreement(),
        }

    def to_lines(self) -> list[str]:
        return [r.to_json() for r in self.records]


def bench_inference(
    model: LdaModel,
    index: AnnIndex,
    queries: np.ndarray,
    k: int | None = None,
    beta: float = DEFAULT_BETA,
    warmup: int = 3,
) -> InferenceBenchReport:
    """Time both inference paths one query at a time (batch size 1).

    Translation happens once up front; per-query wall time covers the LSH
    search plus the logit computation, mirroring how the latency would be
    paid in deployment.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != model.dim:
        raise DimensionMismatch(f"expected (m, {model.dim}) queries, got {queries.shape}")
    head = translate(model, beta)
    if k is None:
        k = index.config.k if index.config.k is not None else default_active_count(model.num_classes)

    for x in queries[: min(warmup, len(queries))]:
        predict_exact(head, x)
        query_active(index, head, x, k)

    report = InferenceBenchReport(num_classes=model.num_classes, k=int(k))
    for i, x in enumerate(queries):
        start = time.perf_counter_ns()
        _, label = predict_exact(head, x)
        elapsed = time.perf_counter_ns() - start
        report.records.append(QueryRecord(i, "exact", elapsed, label))
    for i, x in enumerate(queries):
        start = time.perf_counter_ns()
        _, label = query_active(index, head, x, k)
        elapsed = time.perf_counter_ns() - start
        report.records.append(QueryRecord(i, "active", elapsed, label))
    return report
