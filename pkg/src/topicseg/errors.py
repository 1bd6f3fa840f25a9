"""Exception types shared across the package."""

from __future__ import annotations


class TopicsegError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TopicsegError):
    """A file could not be parsed; carries the offending path and line."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)


class ValidationError(TopicsegError):
    """Input data violates a documented invariant."""
