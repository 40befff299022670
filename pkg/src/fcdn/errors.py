"""Exception types shared across the package.

The CLI maps each of these onto a distinct exit code, so library code
raises the narrowest one that applies.
"""


class ConfigError(ValueError):
    """Invalid configuration key, value, or usage."""


class FormatError(ValueError):
    """A dataset or checkpoint container does not match its declared format."""


class TrainingDivergedError(FloatingPointError):
    """Loss or activations became non-finite during training."""
