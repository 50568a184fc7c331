"""Numeric features, descriptors and template text for molecules."""

from .descriptors import TEMPLATE_PATTERN, DescriptorSet, compute_descriptors, generate_template_text
from .features import (
    ATOM_BLOCKS,
    ATOM_DIM,
    ATOM_SLICES,
    BOND_BLOCKS,
    BOND_DIM,
    BOND_SLICES,
    FeaturizedGraph,
    atom_features,
    bond_features,
    featurize,
)

__all__ = [
    "ATOM_BLOCKS",
    "ATOM_DIM",
    "ATOM_SLICES",
    "BOND_BLOCKS",
    "BOND_DIM",
    "BOND_SLICES",
    "DescriptorSet",
    "FeaturizedGraph",
    "TEMPLATE_PATTERN",
    "atom_features",
    "bond_features",
    "compute_descriptors",
    "featurize",
    "generate_template_text",
]
