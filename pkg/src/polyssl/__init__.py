"""Semi-supervised Mandarin polyphone disambiguation."""

from .errors import ConfigError, DataError

__version__ = "0.1.0"
