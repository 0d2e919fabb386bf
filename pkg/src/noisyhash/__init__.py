"""Cross-modal hashing robust to noisy image-text correspondences."""

from .errors import ConfigError, DataError, FormatError, NoisyHashError, NumericError, UsageError

__version__ = "0.1.0"
