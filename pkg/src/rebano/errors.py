"""Exception hierarchy shared by every module."""


class RebanoError(Exception):
    pass


class ConfigurationError(RebanoError, ValueError):
    """Invalid configuration or construction arguments."""


class ContractViolation(RebanoError, ValueError):
    """Arguments violate a documented precondition (shape, grid, ...)."""


class CapabilityError(RebanoError):
    """The requested operation is not supported for this object."""


class DomainError(RebanoError, ValueError):
    """Input lies outside the mathematical domain of the operation."""


class NumericalFailure(RebanoError, ArithmeticError):
    """A computation produced non-finite values or failed to converge.

    ``value`` carries the offending quantity (loss, residual norm, step index)
    when one is available.
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class GreedySelectionError(RebanoError):
    """The greedy loop tried to select an input that is already in the basis."""
