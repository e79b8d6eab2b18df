"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RegraspError(Exception):
    """Base class for every error raised by this package."""


class ReplyParseError(RegraspError):
    """A reasoner reply could not be parsed; carries the raw text."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class BackendFailure(RegraspError):
    """A reasoner backend could not produce a reply (network, timeout,
    malformed response) after exhausting its retry budget."""
