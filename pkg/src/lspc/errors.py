"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract, so raising the right
class matters more than the message text.
"""


class LspcError(Exception):
    """Base class for all package errors."""


class UsageError(LspcError):
    """Bad arguments or misuse of an API (exit code 1)."""


class FormatError(LspcError):
    """Malformed dataset/checkpoint/config files (exit code 2)."""


class NumericError(LspcError):
    """Non-finite values or numeric aborts during training (exit code 3)."""


class InfeasibleError(NumericError):
    """No policy satisfies the cost constraint of a CMDP."""
