"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """A value lies outside the domain of a function (log of 0, sigma <= 0)."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class ContractError(ValueError):
    """A precondition on arguments or configuration was violated."""
