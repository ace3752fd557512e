"""Exception hierarchy shared by the library and the CLI."""


class DprpError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(DprpError, ValueError):
    exit_code = 2


class DimensionError(ConfigError):
    """Operand shapes are incompatible."""


class UsageError(DprpError, ValueError):
    exit_code = 2


class InputError(DprpError, ValueError):
    exit_code = 3


class DataFormatError(InputError):
    """Malformed dataset or checkpoint bytes."""


class NumericError(DprpError, ArithmeticError):
    exit_code = 4
