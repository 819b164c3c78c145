class ValidationError(ValueError):
    """Bad input or configuration; maps to CLI exit code 2."""


class DivergenceError(RuntimeError):
    """Non-finite loss during training; maps to CLI exit code 3."""
