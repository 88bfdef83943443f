"""Exception hierarchy shared by all submodules."""


class SquidQSDError(Exception):
    """Base class for package errors."""


class InvalidDimensionError(SquidQSDError, ValueError):
    pass


class HermiticityError(SquidQSDError, ValueError):
    pass


class DegenerateStateError(SquidQSDError, ArithmeticError):
    pass


class IntegratorError(SquidQSDError, ArithmeticError):
    """Norm collapse or non-finite values during stochastic integration."""


class TruncationError(SquidQSDError, ArithmeticError):
    """Population leaked into the top of the truncated Fock space."""


class InvalidDensityMatrixError(SquidQSDError, ValueError):
    pass


class DivergenceError(SquidQSDError, ArithmeticError):
    pass


class ConfigError(SquidQSDError, ValueError):
    pass


class CheckpointError(SquidQSDError):
    pass
