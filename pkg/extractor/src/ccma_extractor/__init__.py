"""Feature extraction from frozen encoders into EMBC embedding caches."""

__version__ = "1.0.0"
