"""Exception types shared across the package."""


class NgpkitError(Exception):
    """Base class for all package errors."""


class MissingAssignmentError(NgpkitError):
    """A formula variable is not covered by the given assignment/activations."""


class CapacityError(NgpkitError):
    """An exact operation was asked to run beyond its enumeration cap."""


class ContractError(NgpkitError):
    """An argument violates a documented precondition."""


class ValidationError(NgpkitError):
    """Structured input (facts, vocabularies, configs) fails validation."""


class ParseError(NgpkitError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SaturatedLossError(NgpkitError):
    """The semantic loss was evaluated at probability zero without clipping."""
