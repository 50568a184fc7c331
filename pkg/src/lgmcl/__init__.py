"""Multimodal molecular property models with contrastive encoder pretraining."""

__version__ = "0.1.0"
