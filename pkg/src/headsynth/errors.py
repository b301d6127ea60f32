"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An operation was invoked with arguments that violate its contract."""


class ValidationError(ValueError):
    """A constructed or loaded object violates a structural invariant."""


class ParseError(ValueError):
    """A serialized file could not be decoded; message carries a location."""
