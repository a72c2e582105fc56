"""Guided-wave structural health monitoring: synthesis, CNN features, GMM/KL damage indices, imaging."""

__version__ = "0.1.0"

from .errors import GwshmError, StageError, ValidationError  # noqa: E402

__all__ = ["__version__", "GwshmError", "StageError", "ValidationError"]
