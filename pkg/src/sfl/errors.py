"""Exception hierarchy shared by all solver modules."""


class SflError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SflError, ValueError):
    """Input outside the domain of an operation (bad id, value out of range)."""


class CapExceeded(SflError):
    """Instance is larger than an enumeration-based routine supports."""


class UnsupportedVariant(SflError):
    """The requested problem variant is not handled by this routine."""


class InvariantViolation(SflError):
    """A checked algorithmic invariant failed; carries an optional state dump."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump
