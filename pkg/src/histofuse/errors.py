"""Exception types raised across the package."""


class HistofuseError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HistofuseError, ValueError):
    pass


class NoTissueError(HistofuseError):
    """Too few pixels above the optical-density threshold to estimate stains."""


class DegenerateStainError(HistofuseError):
    """The two estimated stain directions are (nearly) collinear or one stain is absent."""


class DegenerateTrainingError(HistofuseError):
    """Training data contains fewer than two classes."""


class MissingProbabilityError(HistofuseError, KeyError):
    pass


class ParseError(HistofuseError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ModelFormatError(HistofuseError):
    """A model or profile file has a wrong header, version, or malformed body."""
