"""Retrieval quality: average precision, CMC and the rank-sum objective.

Every gallery sample carrying the query's label counts as relevant; there
is no junk or same-camera filtering.  Rank lists may be truncated (the
coarse-to-fine engine only returns members of the selected groups), and
relevant samples missing from a list contribute nothing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Gallery
from .errors import DataFormatError, NoRelevant
from .retrieval import DEFAULT_TOP_GROUPS, Query, RankList, retrieve_batch
from .tdc import GroupIndex, build_index

DEFAULT_RANKS = (1, 5, 10, 20)


def _hits(ranked_labels, query_label) -> np.ndarray:
    if isinstance(ranked_labels, np.ndarray) and ranked_labels.dtype != object:
        return ranked_labels == query_label
    return np.fromiter((lab == query_label for lab in ranked_labels), dtype=bool)


def ap_from_hits(hits: np.ndarray, total_relevant: int) -> float:
    if total_relevant < 1:
        raise NoRelevant("average precision needs at least one relevant sample")
    ranks = np.flatnonzero(hits) + 1
    if ranks.size > total_relevant:
        raise DataFormatError(f"{ranks.size} relevant hits but total_relevant={total_relevant}")
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.sum() / total_relevant)


def average_precision(ranked_labels, query_label, total_relevant: int) -> float:
    """AP of one rank list given the labels of its entries in rank order.

    ``total_relevant`` is the number of gallery samples sharing
    ``query_label``, including any that the list does not contain.
    """
    return ap_from_hits(_hits(ranked_labels, query_label), total_relevant)


def first_hit_rank(ranked_labels, query_label) -> int | None:
    """1-based rank of the first correct match, or None."""
    nz = np.flatnonzero(_hits(ranked_labels, query_label))
    return int(nz[0]) + 1 if nz.size else None


def cmc_at_k(ranked_label_lists: Sequence, query_labels: Sequence, k: int) -> float:
    """Fraction of queries with a correct match within the top ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked_label_lists) != len(query_labels):
        raise DataFormatError("one rank list per query label is required")
    if not query_labels:
        return 0.0
    found = 0
    for labels, q in zip(ranked_label_lists, query_labels):
        r = first_hit_rank(labels, q)
        if r is not None and r <= k:
            found += 1
    return found / len(query_labels)


def objective_value(ranked_labels, query_label) -> int:
    """Sum of 1-based ranks of the relevant entries (lower is better)."""
    return int((np.flatnonzero(_hits(ranked_labels, query_label)) + 1).sum())


def ranked_labels(ranklist: RankList, gallery: Gallery) -> list:
    return [gallery.label(int(p)) for p in ranklist.positions]


@dataclass
class EvalReport:
    mode: str
    mAP: float
    cmc: dict[int, float]
    per_query_ap: list[float]
    objective_values: list[int]
    first_hits: list[int | None]
    skipped: list[int] = field(default_factory=list)  # query positions with no gallery match
    timing_ms: dict[str, float] = field(default_factory=dict)  # mean per query
    num_queries: int = 0
    group_count: int | None = None
    mean_candidates: float = 0.0

    def cmc_curve(self, max_rank: int) -> list[float]:
        if not self.first_hits:
            return [0.0] * max_rank
        hits = np.array([r if r is not None else np.iinfo(np.int64).max for r in self.first_hits])
        return [float(np.mean(hits <= k)) for k in range(1, max_rank + 1)]

    def to_text(self) -> str:
        lines = [
            f"mode            {self.mode}",
            f"queries         {self.num_queries} evaluated, {len(self.skipped)} skipped",
        ]
        if self.group_count is not None:
            lines.append(f"groups          {self.group_count}")
        lines.append(f"mean candidates {self.mean_candidates:.1f}")
        lines.append(f"mAP             {self.mAP:.4f}")
        for k, v in sorted(self.cmc.items()):
            lines.append(f"rank-{k:<10d}{v:.4f}")
        for stage, ms in self.timing_ms.items():
            lines.append(f"{stage + '_ms':<16}{ms:.4f}")
        return "\n".join(lines) + "\n"

    def to_keyvalue(self) -> str:
        kv = {
            "mode": self.mode,
            "queries": self.num_queries,
            "skipped": len(self.skipped),
            "mAP": repr(self.mAP),
            "mean_candidates": repr(self.mean_candidates),
        }
        if self.group_count is not None:
            kv["groups"] = self.group_count
        for k, v in sorted(self.cmc.items()):
            kv[f"cmc.{k}"] = repr(v)
        for stage, ms in self.timing_ms.items():
            kv[f"time_ms.{stage}"] = repr(ms)
        return "".join(f"{k}={v}\n" for k, v in kv.items())

    def cmc_csv(self, max_rank: int = 50) -> str:
        rows = ["rank,cmc"] + [f"{k},{v!r}" for k, v in enumerate(self.cmc_curve(max_rank), start=1)]
        return "\n".join(rows) + "\n"


def evaluate(
    queries: Sequence[Query],
    index: GroupIndex | None,
    gallery: Gallery,
    top_groups: int = DEFAULT_TOP_GROUPS,
    ranks: Sequence[int] = DEFAULT_RANKS,
    workers: int = 1,
) -> EvalReport:
    """Run every query and aggregate mAP, CMC, objective and timing.

    ``index=None`` evaluates the brute-force baseline on the same queries.
    Queries whose label has no gallery match are skipped and listed in
    ``EvalReport.skipped``.
    """
    if not queries:
        raise DataFormatError("query set is empty")
    if any(q.label is None for q in queries):
        raise DataFormatError("every evaluation query needs a person label")
    if gallery.labels is None:
        raise DataFormatError("evaluation needs a labelled gallery")

    results = retrieve_batch(queries, index, gallery, top_groups, workers)

    aps: list[float] = []
    objectives: list[int] = []
    firsts: list[int | None] = []
    skipped: list[int] = []
    n_candidates: list[int] = []
    stage_totals = np.zeros(3)
    for i, (q, r) in enumerate(zip(queries, results)):
        code = gallery.label_table.get(q.label)
        total = 0 if code is None else int(np.count_nonzero(gallery.label_codes == code))
        if total == 0:
            skipped.append(i)
            continue
        hits = gallery.label_codes[r.positions] == code
        aps.append(ap_from_hits(hits, total))
        nz = np.flatnonzero(hits)
        firsts.append(int(nz[0]) + 1 if nz.size else None)
        objectives.append(int((nz + 1).sum()))
        n_candidates.append(len(r))
        t = r.timing
        stage_totals += (t.projection_ms, t.coarse_ms, t.fine_ms)

    n = len(aps)
    report = EvalReport(
        mode="brute_force" if index is None else "coarse_to_fine",
        mAP=float(np.mean(aps)) if n else 0.0,
        cmc={},
        per_query_ap=aps,
        objective_values=objectives,
        first_hits=firsts,
        skipped=skipped,
        num_queries=n,
        group_count=None if index is None else len(index),
        mean_candidates=float(np.mean(n_candidates)) if n else 0.0,
    )
    curve = report.cmc_curve(max(ranks)) if ranks else []
    report.cmc = {int(k): curve[k - 1] for k in ranks}
    means = stage_totals / n if n else stage_totals
    report.timing_ms = {
        "projection": float(means[0]),
        "coarse": float(means[1]),
        "fine": float(means[2]),
        "total": float(means.sum()),
    }
    return report


@dataclass(frozen=True)
class SweepRow:
    theta: float
    group_count: int
    mAP: float
    cmc: dict
    time_ms: float
    build_s: float
    mean_candidates: float


def theta_sweep(
    gallery: Gallery,
    queries: Sequence[Query],
    thetas: Sequence[float],
    k: int,
    top_groups: int = DEFAULT_TOP_GROUPS,
    ranks: Sequence[int] = DEFAULT_RANKS,
) -> list[SweepRow]:
    """Build one index per threshold and evaluate it on ``queries``."""
    rows = []
    for theta in thetas:
        t0 = time.perf_counter()
        index = build_index(gallery, theta, k)
        build_s = time.perf_counter() - t0
        r = evaluate(queries, index, gallery, top_groups, ranks)
        rows.append(SweepRow(float(theta), len(index), r.mAP, r.cmc, r.timing_ms["total"], build_s, r.mean_candidates))
    return rows
