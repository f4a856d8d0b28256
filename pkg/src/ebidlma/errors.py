"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid configuration or inconsistent input dimensions."""


class NumericalError(ArithmeticError):
    """Singular matrices, non-finite costs or gradients."""
