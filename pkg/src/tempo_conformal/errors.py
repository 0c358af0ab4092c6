"""Exception hierarchy.

Every library error carries an ``exit_code`` so the CLI can map failures to
stable process exit statuses without inspecting messages.
"""


class TempoConformalError(Exception):
    exit_code = 1


class ParseError(TempoConformalError, ValueError):
    """A record could not be parsed."""

    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(TempoConformalError, ValueError):
    """Input data parsed but is inconsistent."""

    exit_code = 2


class DuplicateKeyError(ValidationError):
    pass


class NotFoundError(TempoConformalError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(TempoConformalError, ValueError):
    """Invalid parameters or run configuration."""

    exit_code = 3


class NumericError(TempoConformalError, ArithmeticError):
    exit_code = 4
