"""Conformal cross-modal active learning engine over precomputed embedding caches."""

__version__ = "1.0.0"

ENGINE_VERSION = __version__
