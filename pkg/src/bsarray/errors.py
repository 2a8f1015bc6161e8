"""Exceptions raised by the simulation routines."""


class NullStateError(ValueError):
    """An all-zero amplitude list cannot be normalized."""


class ZeroProbabilityError(ArithmeticError):
    """The conditioning event has (numerically) zero probability."""
