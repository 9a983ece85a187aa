"""Two-fold divisive clustering of a gallery and the grouped index built on it.

The gallery starts as one group.  Every sweep, each group whose mean
pairwise squared distance exceeds ``theta`` is split in two around its
furthest pair of samples; sweeping stops once no group violates the
threshold.  Splits depend only on a group's own members, so ``theta``
merely decides how deep the (data-determined) split tree is cut.  A
smaller ``theta`` therefore always refines a larger one.

Offline cost is quadratic in group size: the furthest pair is searched
exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Gallery, squared_distances
from .errors import DimensionMismatch, InvalidGallery, InvariantViolation, TooFewMembers, Unsplittable
from .pca import PcaModel, pca_fit_lenient, pca_transform

log = logging.getLogger(__name__)

# Rows of the pairwise Gram block handled at once (bounded to ~32 MB of float64).
_BLOCK_ENTRIES = 1 << 22


def _as_matrix(members) -> np.ndarray:
    x = np.asarray(members, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, 1)
    if x.ndim != 2:
        raise DimensionMismatch(f"members must form an (N, d) matrix, got shape {x.shape}")
    return x


def dissimilarity_degree(members) -> float:
    """Mean squared Euclidean distance over ordered pairs of distinct members.

    Evaluated as ``2 * sum_i |g_i - mean|^2 / (N - 1)``, which equals the
    pairwise double sum divided by ``N (N - 1)``.  Rows are shifted by the
    first member beforehand so that identical members give exactly 0.
    A single member has degree 0.
    """
    x = _as_matrix(members)
    n = x.shape[0]
    if n == 0:
        raise TooFewMembers("dissimilarity of an empty group is undefined")
    if n == 1:
        return 0.0
    y = x - x[0]
    y -= y.mean(axis=0)
    return float(2.0 * np.einsum("ij,ij->", y, y) / (n - 1))


def group_descriptor(members) -> np.ndarray:
    """Dimension-wise mean of the member descriptors."""
    x = _as_matrix(members)
    if x.shape[0] == 0:
        raise TooFewMembers("group descriptor of an empty group is undefined")
    return x.mean(axis=0)


def _furthest_pair_positions(x: np.ndarray, ids: np.ndarray) -> tuple[int, int]:
    n = x.shape[0]
    if n < 2:
        raise TooFewMembers(f"furthest pair needs at least 2 members, got {n}")
    xc = x - x.mean(axis=0)
    sq = np.einsum("ij,ij->i", xc, xc)
    scale = float(sq.max())
    block = max(1, min(n, _BLOCK_ENTRIES // n))
    cols = np.arange(n)

    best_d = -1.0
    best_key = None  # (lo id, hi id)
    best_pos = None
    for s in range(0, n - 1, block):
        e = min(n, s + block)
        # Gram-trick screen; exact distances are recomputed for the survivors
        g = sq[s:e, None] + sq[None, :] - 2.0 * (xc[s:e] @ xc.T)
        g[cols[None, :] <= np.arange(s, e)[:, None]] = -np.inf
        bm = float(g.max())
        tol = 1e-9 * (abs(bm) + scale) + 1e-300
        if bm < best_d - tol:
            continue
        ii, jj = np.nonzero(g >= max(bm, best_d) - tol)
        pi = ii + s
        diff = x[pi] - x[jj]
        exact = np.einsum("ij,ij->i", diff, diff)
        lo = np.minimum(ids[pi], ids[jj])
        hi = np.maximum(ids[pi], ids[jj])
        top = np.lexsort((hi, lo, -exact))[0]
        cand_d = float(exact[top])
        cand_key = (int(lo[top]), int(hi[top]))
        if cand_d > best_d or (cand_d == best_d and cand_key < best_key):
            best_d, best_key = cand_d, cand_key
            a, b = int(pi[top]), int(jj[top])
            best_pos = (a, b) if ids[a] < ids[b] else (b, a)
    return best_pos


def _member_ids(n: int, ids) -> np.ndarray:
    if ids is None:
        return np.arange(n, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (n,):
        raise DimensionMismatch(f"{ids.size} ids for {n} members")
    return ids


def furthest_pair(members, ids=None) -> tuple[int, int]:
    """Ids ``(g_l, g_r)`` of the pair with the largest squared distance.

    Ties go to the lexicographically smallest ``(id, id)`` pair and ``g_l``
    is always the smaller id.  ``ids`` defaults to row positions.
    """
    x = _as_matrix(members)
    ids = _member_ids(x.shape[0], ids)
    a, b = _furthest_pair_positions(x, ids)
    return int(ids[a]), int(ids[b])


def _split_positions(x: np.ndarray, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = _furthest_pair_positions(x, ids)
    d_left = squared_distances(x, x[a])
    d_right = squared_distances(x, x[b])
    if d_left[b] == 0.0:
        raise Unsplittable("all members share one descriptor")
    # strict '<': members equidistant from both seeds go right
    to_left = d_left < d_right
    return np.flatnonzero(to_left), np.flatnonzero(~to_left)


def split_group(members, ids=None) -> tuple[list[int], list[int]]:
    """Split around the furthest pair; returns the member ids of both halves."""
    x = _as_matrix(members)
    ids = _member_ids(x.shape[0], ids)
    left, right = _split_positions(x, ids)
    return ids[left].tolist(), ids[right].tolist()


@dataclass(frozen=True, eq=False)
class Group:
    positions: np.ndarray  # row positions in the gallery
    members: np.ndarray  # sample ids, same order as positions
    dissimilarity: float

    def __len__(self) -> int:
        return self.positions.size


def tdc_cluster(gallery: Gallery, theta: float) -> list[Group]:
    """Partition ``gallery`` so every group has dissimilarity degree <= ``theta``.

    Groups come back in creation order: the split that removes a group
    appends its left then right half to the end of the list.
    """
    if not theta >= 0:
        raise InvalidGallery(f"theta must be a non-negative number, got {theta}")
    if len(gallery) == 0:
        raise InvalidGallery("cannot cluster an empty gallery")
    x_all = gallery.descriptors
    ids_all = gallery.ids

    def make(pos: np.ndarray) -> Group:
        return Group(pos, ids_all[pos], dissimilarity_degree(x_all[pos]))

    counter = 0
    groups: dict[int, Group] = {counter: make(np.arange(len(gallery)))}
    sweeps = 0
    while True:
        violating = [key for key, g in groups.items() if g.dissimilarity > theta]
        if not violating:
            break
        sweeps += 1
        for key in violating:
            g = groups.pop(key)
            left, right = _split_positions(x_all[g.positions], g.members)
            groups[counter + 1] = make(g.positions[left])
            groups[counter + 2] = make(g.positions[right])
            counter += 2
    log.debug("tdc: %d groups after %d sweeps (theta=%g)", len(groups), sweeps, theta)
    return list(groups.values())


@dataclass(frozen=True, eq=False)
class GroupIndex:
    """Immutable grouped index over one gallery.

    ``group_descriptors_full`` holds one gallery-dim mean vector per group,
    ``group_descriptors_reduced`` their PCA projections used for coarse
    ranking.  Group ids are positions in ``groups``.
    """

    groups: tuple
    theta: float
    group_descriptors_full: np.ndarray
    group_descriptors_reduced: np.ndarray
    pca: PcaModel
    gallery_checksum: str = ""
    pca_source: str = "groups"

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        for name in ("group_descriptors_full", "group_descriptors_reduced"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (len(self.groups) == len(self.group_descriptors_full) == len(self.group_descriptors_reduced)):
            raise InvariantViolation("group descriptor counts differ from group count")

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def dim(self) -> int:
        return self.group_descriptors_full.shape[1]

    @property
    def reduced_dim(self) -> int:
        return self.group_descriptors_reduced.shape[1]

    def group_sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=np.int64)

    def check(self, gallery: Gallery) -> None:
        """Raise :class:`InvariantViolation` unless the groups partition ``gallery``
        and respect the threshold."""
        seen = np.zeros(len(gallery), dtype=np.int64)
        for g in self.groups:
            if len(g) == 0:
                raise InvariantViolation("empty group")
            seen[g.positions] += 1
            if g.dissimilarity > self.theta:
                raise InvariantViolation(f"group dissimilarity {g.dissimilarity} exceeds theta {self.theta}")
        if not np.all(seen == 1):
            raise InvariantViolation("groups do not partition the gallery")


PCA_SOURCES = ("groups", "gallery")


def build_index(gallery: Gallery, theta: float, k: int, pca_source: str = "groups") -> GroupIndex:
    """Cluster, average each group, and fit PCA for the coarse stage.

    ``pca_source`` selects the PCA training set: the group descriptors
    (default) or the raw gallery descriptors.  With fewer than two group
    descriptors the gallery is used instead.
    """
    if pca_source not in PCA_SOURCES:
        raise ValueError(f"pca_source must be one of {PCA_SOURCES}")
    if not 1 <= k <= gallery.dim:
        raise DimensionMismatch(f"reduced dim {k} must lie in [1, {gallery.dim}]")
    groups = tdc_cluster(gallery, theta)
    full = np.stack([gallery.descriptors[g.positions].mean(axis=0) for g in groups])
    if pca_source == "groups" and len(groups) < 2:
        pca_source = "gallery"
    fit_on = full if pca_source == "groups" else gallery.descriptors
    pca = pca_fit_lenient(fit_on, k)
    reduced = pca_transform(pca, full)
    return GroupIndex(groups, float(theta), full, reduced, pca, gallery.checksum(), pca_source)
