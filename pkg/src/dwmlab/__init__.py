"""Adaptive dynamic watermarking for replay-attack detection in linear control loops."""
from ._validation import ConfigurationError, DomainError

__version__ = "0.1.0"
__all__ = ["ConfigurationError", "DomainError", "__version__"]
