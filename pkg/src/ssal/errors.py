"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class SSALError(Exception):
    exit_code = 1


class ConfigError(SSALError, ValueError):
    exit_code = 2


class DataError(SSALError, ValueError):
    exit_code = 3


class BudgetError(SSALError, ValueError):
    exit_code = 4
