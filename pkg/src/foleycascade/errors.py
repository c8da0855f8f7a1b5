"""Exception hierarchy. CLI exit codes hang off these classes."""


class FoleyError(Exception):
    exit_code = 1


class ConfigError(FoleyError, ValueError):
    exit_code = 2


class DimensionError(FoleyError, ValueError):
    exit_code = 2


class LengthError(FoleyError, ValueError):
    exit_code = 2


class TokenizationError(FoleyError, KeyError):
    exit_code = 2

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class StateError(FoleyError, RuntimeError):
    """Missing checkpoint, untrained model, or similar absent state."""

    exit_code = 3


class NumericalError(FoleyError, ArithmeticError):
    exit_code = 4


class InsufficientDataError(FoleyError, ValueError):
    exit_code = 2
