"""Exception taxonomy shared across the package.

Every rejection the library performs raises one of these types, so callers
(and the CLI exit-code mapping) can distinguish bad shapes, bad files, bad
configs, and numeric blow-ups without string matching.
"""


class IpclError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(IpclError):
    """Operands have incompatible shapes; message carries the diagnostic."""


class DomainError(IpclError):
    """Input is outside an operation's mathematical domain (e.g. zero norm)."""


class SpecError(IpclError):
    """A declarative spec (mask, config section) is internally invalid."""


class ConfigError(IpclError):
    """Experiment config file is malformed or contains unknown keys."""


class ParseError(IpclError):
    """A binary data file failed to parse."""


class MagicError(ParseError):
    """File header magic number does not match the expected format."""


class TruncatedError(ParseError):
    """File ends before the payload its header promises."""


class CountMismatchError(ParseError):
    """Image count and label count disagree."""


class ChecksumError(IpclError):
    """Downloaded archive does not match its manifest SHA-256."""


class DivergenceError(IpclError):
    """Training produced a non-finite loss; carries the diagnostic record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class PreconditionError(IpclError):
    """A documented precondition of a theory check is violated."""


class ArtifactMismatchError(IpclError):
    """Checkpoint does not fit the architecture the config describes."""
