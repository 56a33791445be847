"""Adversarially censored representations for fair classification and image de-annotation."""

__version__ = "0.1.0"
