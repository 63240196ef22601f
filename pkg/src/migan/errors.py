"""Exception hierarchy; the CLI maps each class to an exit code."""


class MiganError(Exception):
    exit_code = 1


class ConfigError(MiganError, ValueError):
    exit_code = 2


class DataError(MiganError, ValueError):
    exit_code = 3


class NumericError(MiganError, ArithmeticError):
    exit_code = 4
