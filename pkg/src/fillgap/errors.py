"""Exception hierarchy shared across the package."""


class FillgapError(Exception):
    """Base class for all errors raised by this package."""


class DataError(FillgapError):
    """Invalid input data: parse failures, shape mismatches, contract violations."""


class IllConditionedError(FillgapError):
    """A numerical operation failed or did not meet its accuracy contract."""


class ConfigError(FillgapError):
    """An experiment configuration file is invalid; message names the field."""
