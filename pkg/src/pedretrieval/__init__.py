"""Grouped coarse-to-fine pedestrian retrieval.

Galleries of person descriptors are split into tight groups by two-fold
divisive clustering; a query first ranks group means in a PCA-reduced
space, then exactly re-ranks the members of the closest groups.
"""

from .core import Gallery, ValidationReport, squared_euclidean, validate_gallery
from .descriptors import RegionDescriptor, assemble_glad, gap, split_glad, weighted_fuse
from .evaluation import EvalReport, average_precision, cmc_at_k, evaluate, objective_value
from .geometry import Box, KeypointSet, PartBoxes, body_boxes, clamp_box, head_box, part_boxes
from .pca import PcaModel, pca_fit, pca_transform, reconstruction_error
from .retrieval import (
    Query,
    RankList,
    brute_force_retrieve,
    coarse_retrieve,
    fine_retrieve,
    retrieve,
    retrieve_batch,
)
from .synthetic import SyntheticSpec, gen_synthetic
from .tdc import (
    Group,
    GroupIndex,
    build_index,
    dissimilarity_degree,
    furthest_pair,
    group_descriptor,
    split_group,
    tdc_cluster,
)

__version__ = "0.1.0"
