"""Desk-scale lab for information-preserving contrastive pretraining."""

__version__ = "0.1.0"
