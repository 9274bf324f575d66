"""Exception hierarchy shared by every drrp module."""


class DrrpError(Exception):
    """Base class for all library errors."""


class ParseError(DrrpError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(DrrpError):
    pass


class InsufficientDataError(DrrpError):
    pass


class UndefinedMeasureError(DrrpError):
    """A measure has no finite value on the given input (e.g. zero volatility)."""


class InvalidMeasureError(DrrpError):
    """A measure value is outside the domain an allocation rule accepts."""


class GridTooNarrowError(DrrpError):
    pass


class ConvergenceError(DrrpError):
    """An optimizer stopped without converging.

    ``best`` carries the best parameters seen and ``value`` their objective.
    """

    def __init__(self, message, best=None, value=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.value = value
        self.diagnostics = diagnostics or {}


class NumericError(DrrpError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class RankDeficientError(DrrpError):
    pass


class ConfigError(DrrpError):
    pass
