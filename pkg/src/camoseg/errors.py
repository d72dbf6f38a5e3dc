"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies.
"""


class ConfigError(ValueError):
    """Invalid configuration value or unparseable config file (exit code 2)."""


class ShapeMismatchError(ValueError):
    """Array/tensor dimensions violate an operation's contract (exit code 2)."""


class DataLayoutError(OSError):
    """Dataset directory problems such as unmatched basenames (exit code 3)."""

    def __init__(self, message, unmatched=None):
        super().__init__(message)
        self.unmatched = list(unmatched) if unmatched else []


class CheckpointError(RuntimeError):
    """Corrupt checkpoint or checkpoint/config mismatch (exit code 5)."""


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN/Inf (exit code 4)."""


class WeightLoadError(RuntimeError):
    """No tensor in an external weight container could be matched."""

    def __init__(self, message, rejected=None):
        super().__init__(message)
        self.rejected = list(rejected) if rejected else []
