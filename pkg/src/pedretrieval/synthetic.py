"""Deterministic Gaussian-cluster galleries standing in for real re-ID features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Gallery
from .errors import InvalidSpec
from .retrieval import Query


@dataclass(frozen=True)
class SyntheticSpec:
    identities: int
    samples_per_identity: int
    dim: int
    within_std: float
    between_std: float
    seed: int = 0

    def __post_init__(self):
        for name in ("identities", "samples_per_identity", "dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidSpec(f"{name} must be a positive integer, got {v!r}")
        for name in ("within_std", "between_std"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidSpec(f"{name} must be a positive real, got {v!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpec("seed must fit in 64 bits")


def gen_synthetic(spec: SyntheticSpec) -> tuple[Gallery, list[Query]]:
    """Identity centroids ~ N(0, between_std^2), samples ~ N(centroid, within_std^2).

    Gallery sample ``i`` has id ``i`` and belongs to identity
    ``i // samples_per_identity``; one extra sample per identity is held out
    as a labelled query with ``query_id`` equal to the identity.  Values
    are rounded to float32 so a written and re-read gallery is identical.
    """
    rng = np.random.default_rng(int(spec.seed))
    p, s, d = spec.identities, spec.samples_per_identity, spec.dim
    centroids = rng.normal(0.0, spec.between_std, size=(p, d))
    noise = rng.normal(0.0, spec.within_std, size=(p, s + 1, d))
    samples = (centroids[:, None, :] + noise).astype(np.float32).astype(np.float64)

    gallery_x = samples[:, :s, :].reshape(p * s, d)
    labels = tuple(int(i) for i in np.repeat(np.arange(p), s))
    gallery = Gallery(np.arange(p * s), gallery_x, labels)
    queries = [Query(samples[i, s], label=i, query_id=i) for i in range(p)]
    return gallery, queries
