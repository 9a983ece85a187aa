"""Coarse-to-fine retrieval over a :class:`~pedretrieval.tdc.GroupIndex`.

The coarse stage projects the query with the index PCA and ranks group
descriptors in the reduced space; the fine stage ranks every member of
the top-``K`` groups by full-dimension squared distance.  Only those
members are returned.  Distance ties resolve to the smaller id at both
stages.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import Gallery, as_descriptor, squared_distances
from .errors import DimensionMismatch, UnknownGroup
from .pca import pca_transform
from .tdc import GroupIndex

DEFAULT_TOP_GROUPS = 100


@dataclass(frozen=True)
class Query:
    descriptor: np.ndarray
    label: object = None
    query_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "descriptor", as_descriptor(self.descriptor))


@dataclass(frozen=True)
class StageTiming:
    projection_ms: float = 0.0
    coarse_ms: float = 0.0
    fine_ms: float = 0.0

    @property
    def total_ms(self) -> float:
        return self.projection_ms + self.coarse_ms + self.fine_ms


@dataclass(frozen=True, eq=False)
class RankList:
    ids: np.ndarray
    distances: np.ndarray
    positions: np.ndarray  # gallery rows, parallel to ids
    timing: StageTiming | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return self.ids.size

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.ids.tolist(), self.distances.tolist()))

    def same_as(self, other: "RankList", atol: float = 0.0) -> bool:
        return (
            self.ids.shape == other.ids.shape
            and bool(np.array_equal(self.ids, other.ids))
            and bool(np.allclose(self.distances, other.distances, rtol=0.0, atol=atol))
        )


def _descriptor(q) -> np.ndarray:
    return q.descriptor if isinstance(q, Query) else as_descriptor(q)


def _ranked(dists: np.ndarray, keys: np.ndarray, limit: int | None = None) -> np.ndarray:
    """Indices ordering ``dists`` ascending, ties by ascending ``keys``; first ``limit`` only."""
    n = dists.size
    if limit is None or limit >= n:
        return np.lexsort((keys, dists))
    part = np.argpartition(dists, limit - 1)[:limit]
    cutoff = dists[part].max()
    cand = np.flatnonzero(dists <= cutoff)
    return cand[np.lexsort((keys[cand], dists[cand]))][:limit]


def _rank_positions(gallery: Gallery, positions: np.ndarray, q: np.ndarray) -> RankList:
    d = squared_distances(gallery.descriptors[positions], q)
    ids = gallery.ids[positions]
    order = _ranked(d, ids)
    return RankList(ids[order], d[order], positions[order])


def brute_force_retrieve(q, gallery: Gallery) -> RankList:
    """Whole gallery ranked by squared distance to the query."""
    v = _descriptor(q)
    if v.size != gallery.dim:
        raise DimensionMismatch(f"query dim {v.size} != gallery dim {gallery.dim}")
    return _rank_positions(gallery, np.arange(len(gallery)), v)


def _coarse(v: np.ndarray, index: GroupIndex, top_groups: int) -> tuple[np.ndarray, float, float]:
    t0 = time.perf_counter()
    z = pca_transform(index.pca, v)
    t1 = time.perf_counter()
    d = squared_distances(index.group_descriptors_reduced, z)
    order = _ranked(d, np.arange(d.size), top_groups)
    t2 = time.perf_counter()
    return order, (t1 - t0) * 1e3, (t2 - t1) * 1e3


def coarse_retrieve(q, index: GroupIndex, top_groups: int = DEFAULT_TOP_GROUPS) -> np.ndarray:
    """Ids of the ``top_groups`` groups nearest to the query in the reduced space."""
    if top_groups < 1:
        raise ValueError("top_groups must be >= 1")
    v = _descriptor(q)
    if v.size != index.dim:
        raise DimensionMismatch(f"query dim {v.size} != index dim {index.dim}")
    return _coarse(v, index, top_groups)[0]


def fine_retrieve(q, index: GroupIndex, gallery: Gallery, candidate_groups: Iterable[int]) -> RankList:
    """Rank the members of ``candidate_groups`` by full-dimension distance."""
    v = _descriptor(q)
    if v.size != gallery.dim:
        raise DimensionMismatch(f"query dim {v.size} != gallery dim {gallery.dim}")
    chosen = list(dict.fromkeys(int(g) for g in candidate_groups))
    for g in chosen:
        if not 0 <= g < len(index):
            raise UnknownGroup(g)
    if not chosen:
        empty = np.empty(0, dtype=np.int64)
        return RankList(empty, np.empty(0), empty)
    positions = np.concatenate([index.groups[g].positions for g in chosen])
    return _rank_positions(gallery, positions, v)


def retrieve(q, index: GroupIndex, gallery: Gallery, top_groups: int = DEFAULT_TOP_GROUPS) -> RankList:
    """Coarse group selection followed by exact re-ranking; the result carries stage timings."""
    if top_groups < 1:
        raise ValueError("top_groups must be >= 1")
    v = _descriptor(q)
    if v.size != index.dim:
        raise DimensionMismatch(f"query dim {v.size} != index dim {index.dim}")
    groups, proj_ms, coarse_ms = _coarse(v, index, top_groups)
    t0 = time.perf_counter()
    ranked = fine_retrieve(v, index, gallery, groups)
    fine_ms = (time.perf_counter() - t0) * 1e3
    return RankList(ranked.ids, ranked.distances, ranked.positions, StageTiming(proj_ms, coarse_ms, fine_ms))


def retrieve_batch(
    queries: Sequence,
    index: GroupIndex | None,
    gallery: Gallery,
    top_groups: int = DEFAULT_TOP_GROUPS,
    workers: int = 1,
) -> list[RankList]:
    """Run many queries; ``index=None`` selects brute force.

    Queries share read-only state only, so ``workers > 1`` runs them on a
    thread pool.  Output order always matches input order.
    """

    def one(q):
        if index is None:
            t0 = time.perf_counter()
            r = brute_force_retrieve(q, gallery)
            ms = (time.perf_counter() - t0) * 1e3
            return RankList(r.ids, r.distances, r.positions, StageTiming(fine_ms=ms))
        return retrieve(q, index, gallery, top_groups)

    if workers <= 1:
        return [one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, queries))
