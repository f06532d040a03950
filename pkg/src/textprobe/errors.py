"""Exception hierarchy shared across the package."""


class TextProbeError(Exception):
    """Base class for all package errors."""


class ParseError(TextProbeError):
    """A file or response failed to parse; carries location context."""

    def __init__(self, message: str, *, source: str = "", line: int | None = None):
        loc = source
        if line is not None:
            loc = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.source = source
        self.line = line


class EmptyLexicon(TextProbeError):
    """A lexicon file parsed but contained no usable entries."""


class EmptyText(TextProbeError):
    """An operation that needs at least one token received none."""


class EditOnProtected(TextProbeError):
    """An edit targeted a protected token position."""


class PositionOutOfRange(TextProbeError):
    """An edit targeted a position outside the token sequence."""


class LabelMismatch(TextProbeError):
    """A label was not part of the configured label set."""


class MalformedResponse(TextProbeError):
    """A model response did not conform to the structured confidence format."""


class Timeout(TextProbeError):
    """A model call exceeded its deadline after all retries."""


class EndpointUnreachable(TextProbeError):
    """A remote endpoint could not be reached after all retries."""


class CheckerUnavailable(TextProbeError):
    """The grammar-checker service could not be reached."""


class ConfigError(TextProbeError):
    """A configuration value was missing, contradictory, or out of range."""


class UnknownLabel(TextProbeError):
    """A dataset record carried a label outside the configured label set."""
