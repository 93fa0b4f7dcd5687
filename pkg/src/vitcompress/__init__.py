"""vitcompress: learnable-sparsity search, structural slicing and retraining
for compact vision transformers, on a small deterministic autodiff engine."""

__version__ = "0.1.0"

from .accounting import CostReport, cost_report, count_macs, count_params
from .masks import MaskSet, SparsityWeights, init_masks, sparsity_penalty
from .model import ViTConfig, forward, init_model
from .search import RankedMasks, SearchHyper, rank_masks, search
from .slicer import (Budget, SlicedConfig, SlimArchitecture, binarize_masks,
                     enforce_patch_nesting, forward_sliced, select_architecture,
                     slice_model)
from .tensor import Tensor, backward, record

__all__ = [
    "Budget", "CostReport", "MaskSet", "RankedMasks", "SearchHyper",
    "SlicedConfig", "SlimArchitecture", "SparsityWeights", "Tensor",
    "ViTConfig", "backward", "binarize_masks", "cost_report", "count_macs",
    "count_params", "enforce_patch_nesting", "forward", "forward_sliced",
    "init_masks", "init_model", "rank_masks", "record", "search",
    "select_architecture", "slice_model", "sparsity_penalty",
]
