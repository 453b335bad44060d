"""Exception types shared across the toolkit."""


class GlassesimError(Exception):
    """Base class for all toolkit errors."""


class DomainError(GlassesimError, ValueError):
    """An argument is outside the physically meaningful domain."""


class ConfigError(GlassesimError, ValueError):
    """A configuration object or file is inconsistent."""


class GeometryError(GlassesimError, ValueError):
    """A geometric construction is degenerate or impossible."""


class ParseError(GlassesimError, ValueError):
    """An input file could not be parsed.

    ``line`` carries the 1-based line number when known.
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
