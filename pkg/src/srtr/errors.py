"""Exception hierarchy.

Each class carries a ``category`` string; the CLI prints it so callers can
branch on the failure kind without parsing messages.
"""


class SrtrError(Exception):
    category = "error"


class DimensionError(SrtrError, ValueError):
    category = "dimension"


class NumericError(SrtrError, ArithmeticError):
    category = "numeric"


class ContractError(SrtrError, RuntimeError):
    category = "contract"


class ConfigError(SrtrError, ValueError):
    category = "config"


class InputError(SrtrError, ValueError):
    category = "input"


class BankLookupError(SrtrError, KeyError):
    category = "lookup"

    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class LoadError(SrtrError, IOError):
    category = "load"


class GenerationError(SrtrError, RuntimeError):
    category = "generation"
