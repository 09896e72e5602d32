"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point lies outside the chart domain of a model."""


class TubularZoneError(ValueError):
    """An operation restricted to the tubular collar was called outside it."""


class IntegrationError(RuntimeError):
    """A time stepper could not complete a step (guard exhaustion, etc.)."""

    def __init__(self, message, node_index=None):
        super().__init__(message)
        self.node_index = node_index


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested accuracy."""
