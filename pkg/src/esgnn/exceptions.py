"""Exception hierarchy shared by all esgnn modules."""


class EsgnnError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigurationError(EsgnnError, ValueError):
    """Invalid parameters, recipes or run configuration."""

    exit_code = 2


class ShapeError(EsgnnError, ValueError):
    """Array or graph dimensions that do not line up."""

    exit_code = 2


class DataError(EsgnnError):
    """Dataset files that are missing or unusable."""

    exit_code = 3


class ParseError(DataError):
    """Malformed dataset file. Carries the offending file and line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}" + (f":{line}" if line is not None else "") + ": "
        super().__init__(where + message)


class NumericalError(EsgnnError, ArithmeticError):
    """An iterative numerical routine failed (e.g. power iteration did not converge)."""

    exit_code = 4

    def __init__(self, message, iterate=None):
        self.iterate = iterate
        super().__init__(message)


class EchoStateError(ConfigurationError):
    """The scaled recursive matrix violates the echo-state condition rho < 1."""
