"""Exception types shared across the package."""


class NumericalFailure(ArithmeticError):
    """A computation could not be completed to the required precision."""


class CrossTermSingularityError(NumericalFailure):
    """The general-covariance cross-term formula hit a vanishing denominator."""


class SingularSystemError(NumericalFailure):
    """A weight system stayed singular after the regularization floor."""


class ConfigError(ValueError):
    """Malformed or inconsistent user configuration."""
