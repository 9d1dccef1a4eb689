"""Exception hierarchy shared by every stage of the pipeline."""


class LatentReweightError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(LatentReweightError, ValueError):
    """Invalid configuration, shapes or user input."""

    exit_code = 2


class ContractError(LatentReweightError, ValueError):
    """A caller broke an operation's precondition."""

    exit_code = 2


class NumericError(LatentReweightError, ArithmeticError):
    """Non-finite values or diverging training."""

    exit_code = 3


class StarvationError(LatentReweightError, RuntimeError):
    """A rejection-style sampler exhausted its draw budget."""

    exit_code = 3
