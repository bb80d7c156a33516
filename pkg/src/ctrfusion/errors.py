"""Error taxonomy shared across the package.

Two failure classes matter operationally: bad inputs (files, shapes,
configs) and numeric blow-ups (NaN/Inf). The CLI maps them to distinct
exit codes.
"""


class ValidationError(ValueError):
    """Malformed input: bad shapes, bad files, bad config, bad ids."""


class NumericError(ArithmeticError):
    """Non-finite value produced where a finite one is required."""
