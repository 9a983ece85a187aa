"""Samples, galleries and the squared Euclidean distance.

Descriptors are plain 1-D float64 numpy arrays.  Storage on disk is
float32, but every distance is accumulated in double precision.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidGallery

Label = Hashable  # int or str person identity


def as_descriptor(values) -> np.ndarray:
    """Return ``values`` as a 1-D float64 array, rejecting empty or non-finite input."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch(f"descriptor must be a non-empty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidGallery("descriptor has non-finite entries")
    return v


def squared_euclidean(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.dot(diff, diff))


def squared_distances(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from ``q`` to every row of ``rows``.

    Each row is reduced independently, so the value for a given row does
    not depend on which other rows are present.  Both retrieval stages and
    the brute-force baseline rely on this to produce identical numbers.
    """
    if rows.shape[-1] != q.shape[-1]:
        raise DimensionMismatch(f"dimension mismatch: {rows.shape[-1]} vs {q.shape[-1]}")
    diff = rows - q
    return np.einsum("ij,ij->i", diff, diff)


@dataclass(frozen=True)
class ValidationReport:
    duplicate_ids: list = field(default_factory=list)
    dimension_mismatches: list = field(default_factory=list)  # (sample id, dim)
    non_finite_ids: list = field(default_factory=list)
    empty: bool = False
    negative_ids: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (
            self.duplicate_ids
            or self.dimension_mismatches
            or self.non_finite_ids
            or self.negative_ids
            or self.empty
        )

    def issues(self) -> list[str]:
        out = []
        if self.empty:
            out.append("gallery is empty")
        for sid in self.duplicate_ids:
            out.append(f"duplicate sample id {sid}")
        for sid, dim in self.dimension_mismatches:
            out.append(f"sample {sid} has dimension {dim}")
        for sid in self.non_finite_ids:
            out.append(f"sample {sid} has non-finite entries")
        for sid in self.negative_ids:
            out.append(f"sample id {sid} is negative")
        return out

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise InvalidGallery("; ".join(self.issues()))


@dataclass(frozen=True, eq=False)
class Gallery:
    """Ordered, immutable collection of labelled descriptors.

    ``ids`` are non-negative integer sample ids, ``labels`` holds one
    person label per sample (``None`` for unlabelled distractors) or is
    ``None`` altogether, and ``descriptors`` is an ``(N, d)`` float64 array.
    Construction does not validate; use :meth:`from_samples` or
    :func:`validate_gallery`.
    """

    ids: np.ndarray
    descriptors: np.ndarray
    labels: tuple | None = None

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        desc = np.ascontiguousarray(self.descriptors, dtype=np.float64)
        if desc.ndim == 1 and desc.size == 0:
            desc = desc.reshape(0, 0)
        ids.flags.writeable = False
        desc.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "descriptors", desc)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def from_samples(cls, samples: Iterable[tuple]) -> "Gallery":
        """Build from ``(id, label, descriptor)`` triples, validating first."""
        samples = list(samples)
        validate_gallery(samples).raise_if_invalid()
        ids = [int(s[0]) for s in samples]
        labels = tuple(s[1] for s in samples)
        desc = np.stack([np.asarray(s[2], dtype=np.float64) for s in samples])
        return cls(ids, desc, None if all(l is None for l in labels) else labels)

    def __len__(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def label(self, pos: int):
        return None if self.labels is None else self.labels[pos]

    @cached_property
    def position_of(self) -> dict[int, int]:
        return {int(sid): i for i, sid in enumerate(self.ids)}

    @cached_property
    def label_codes(self) -> np.ndarray:
        """Integer code per sample (-1 for unlabelled) for vectorised matching."""
        codes = np.full(len(self), -1, dtype=np.int64)
        if self.labels is not None:
            table = self.label_table
            for i, lab in enumerate(self.labels):
                if lab is not None:
                    codes[i] = table[lab]
        codes.flags.writeable = False
        return codes

    @cached_property
    def label_table(self) -> dict:
        table: dict = {}
        for lab in self.labels or ():
            if lab is not None and lab not in table:
                table[lab] = len(table)
        return table

    def relevance(self, label) -> np.ndarray:
        """Boolean mask of gallery samples whose label equals ``label``."""
        code = self.label_table.get(label)
        if code is None:
            return np.zeros(len(self), dtype=bool)
        return self.label_codes == code

    def checksum(self) -> str:
        """SHA-256 over ids, float32 descriptor bytes and labels."""
        h = hashlib.sha256()
        h.update(np.asarray(self.descriptors.shape, dtype="<u8").tobytes())
        h.update(self.ids.astype("<u8").tobytes())
        h.update(self.descriptors.astype("<f4").tobytes())
        if self.labels is not None:
            for lab in self.labels:
                h.update(repr(lab).encode("utf-8"))
                h.update(b"\x00")
        return h.hexdigest()


def validate_gallery(g: Gallery | Sequence[tuple]) -> ValidationReport:
    """Report duplicate ids, dimension mismatches, non-finite entries and emptiness.

    Accepts a :class:`Gallery` or a raw sequence of ``(id, label, descriptor)``
    triples (the only form in which ragged dimensions can occur).
    """
    if isinstance(g, Gallery):
        ids = [int(x) for x in g.ids]
        vectors = list(g.descriptors) if len(g) else []
    else:
        ids = [int(s[0]) for s in g]
        vectors = [np.asarray(s[2], dtype=np.float64) for s in g]

    if not ids:
        return ValidationReport(empty=True)

    seen: set[int] = set()
    dups: list[int] = []
    for sid in ids:
        if sid in seen and sid not in dups:
            dups.append(sid)
        seen.add(sid)

    dims = [v.size if v.ndim == 1 else -1 for v in vectors]
    ref = Counter(dims).most_common(1)[0][0]
    mismatches = [(sid, d) for sid, d in zip(ids, dims) if d != ref or d <= 0]
    non_finite = [sid for sid, v in zip(ids, vectors) if not np.all(np.isfinite(v))]
    negative = [sid for sid in ids if sid < 0]
    return ValidationReport(dups, mismatches, non_finite, negative_ids=negative)
