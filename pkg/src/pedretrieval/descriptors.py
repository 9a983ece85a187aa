"""Global average pooling and assembly of the four-region descriptor.

A feature-map stack is an ``(M, Y, X)`` array: ``M`` channels of ``Y``
rows by ``X`` columns.  Pooling each channel gives an ``M``-dim region
descriptor; the global, head, upper-body and lower-body descriptors are
concatenated in that order into a ``4M``-dim vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataFormatError, LengthMismatch, RegionMismatch

REGIONS = ("global", "head", "upper_body", "lower_body")
DEFAULT_CHANNELS = 1024
# head, upper body, lower body; proportional to region size
PART_WEIGHTS = (0.2, 0.4, 0.4)


def _as_stack(stack) -> np.ndarray:
    s = np.asarray(stack, dtype=np.float64)
    if s.ndim != 3 or min(s.shape) == 0:
        raise DataFormatError(f"feature-map stack must be a non-empty (M, Y, X) array, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise DataFormatError("feature-map stack has non-finite responses")
    return s


def gap(stack) -> np.ndarray:
    """Mean response of every channel over its spatial extent.

    The same pooling produces class scores from confidence maps and
    descriptors from feature-layer maps.
    """
    s = _as_stack(stack)
    return s.reshape(s.shape[0], -1).mean(axis=1)


@dataclass(frozen=True)
class RegionDescriptor:
    region: str
    vector: np.ndarray

    def __post_init__(self):
        if self.region not in REGIONS:
            raise RegionMismatch(f"unknown region {self.region!r}; expected one of {REGIONS}")
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise RegionMismatch(f"{self.region} descriptor must be a non-empty vector")
        object.__setattr__(self, "vector", v)

    @classmethod
    def from_stack(cls, region: str, stack) -> "RegionDescriptor":
        return cls(region, gap(stack))

    @property
    def dim(self) -> int:
        return self.vector.size


def assemble_glad(*parts: RegionDescriptor) -> np.ndarray:
    """Concatenate global, head, upper-body and lower-body descriptors.

    Arguments may arrive in any order; the output layout is always
    ``[global; head; upper_body; lower_body]`` with no normalisation.
    """
    if len(parts) != len(REGIONS):
        raise RegionMismatch(f"need exactly {len(REGIONS)} region descriptors, got {len(parts)}")
    by_region = {}
    for p in parts:
        if p.region in by_region:
            raise RegionMismatch(f"region {p.region!r} given twice")
        by_region[p.region] = p
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        raise RegionMismatch(f"region descriptors disagree on dimension: {sorted(dims)}")
    return np.concatenate([by_region[r].vector for r in REGIONS])


def split_glad(glad) -> dict[str, np.ndarray]:
    """Inverse of :func:`assemble_glad`."""
    v = np.asarray(glad, dtype=np.float64)
    if v.ndim != 1 or v.size == 0 or v.size % len(REGIONS):
        raise RegionMismatch(f"descriptor of length {v.size} is not a four-region concatenation")
    m = v.size // len(REGIONS)
    return {r: v[i * m:(i + 1) * m].copy() for i, r in enumerate(REGIONS)}


def weighted_fuse(descriptors: Sequence[RegionDescriptor], weights: Sequence[float]) -> np.ndarray:
    """Concatenate descriptors after scaling each by its weight, keeping input order.

    Under squared Euclidean distance this weights each region's distance
    by the square of its weight.
    """
    if len(descriptors) != len(weights):
        raise LengthMismatch(f"{len(descriptors)} descriptors but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise DataFormatError("weights must be non-negative")
    return np.concatenate([float(w) * d.vector for d, w in zip(descriptors, weights)])
