"""Marginalized shared-frailty illness-death models."""

__version__ = "0.1.0"
