"""Bi-directional attention entity graph network for multi-hop QA."""

__version__ = "0.1.0"

from .config import Ablation, FeatureConfig, ModelConfig, TrainConfig, make_variant
from .data import Document, Sample, SyntheticConfig, apply_mask, generate_synthetic, load_wikihop
from .graph import EntityGraph, Mention, Relation, build_graph, find_mentions

__all__ = [
    "Ablation",
    "Document",
    "EntityGraph",
    "FeatureConfig",
    "Mention",
    "ModelConfig",
    "Relation",
    "Sample",
    "SyntheticConfig",
    "TrainConfig",
    "apply_mask",
    "build_graph",
    "find_mentions",
    "generate_synthetic",
    "load_wikihop",
    "make_variant",
]
