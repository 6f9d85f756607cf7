class CarlaError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class DataError(CarlaError, ValueError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 2


class NumericError(CarlaError, ArithmeticError):
    """Non-finite loss or another numerical breakdown during training."""

    exit_code = 3


class UsageError(CarlaError, ValueError):
    """Invalid command-line usage or option value."""

    exit_code = 1
