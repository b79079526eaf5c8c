"""Exception types shared across the toolkit."""


class SpkVerError(Exception):
    """Base class for errors the CLI reports with exit status 1."""


class FormatError(SpkVerError, ValueError):
    """Malformed file content. Carries the source name and 1-based line when known."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class InputError(SpkVerError, ValueError):
    pass


class ConfigError(SpkVerError, ValueError):
    pass
