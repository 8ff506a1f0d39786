"""Exception types raised across the package."""


class HmwvError(Exception):
    """Base class for package errors."""


class DegenerateInputError(HmwvError, ValueError):
    """Input carries no usable information (e.g. an all-zero frame)."""


class BitstreamError(HmwvError):
    """Malformed, truncated or inconsistent coded data.

    ``section`` names the bitstream section being read when the failure
    occurred, if known.
    """

    def __init__(self, message, section=None):
        if section is not None:
            message = f"[{section}] {message}"
        super().__init__(message)
        self.section = section


class BudgetError(HmwvError, ValueError):
    """Requested bit budget cannot even cover the fixed stream overhead."""

    def __init__(self, message, minimum_kbps):
        super().__init__(f"{message} (minimum rate ~{minimum_kbps:.2f} kbps)")
        self.minimum_kbps = minimum_kbps
