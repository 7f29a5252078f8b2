"""Exception hierarchy shared by all vidcap modules."""


class VidcapError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(VidcapError):
    """Operands have incompatible dimensions."""


class DomainError(VidcapError):
    """Input is outside an operation's mathematical domain."""


class VocabularyError(VidcapError):
    """Token id outside the vocabulary, or vocabulary mismatch."""


class FormatError(VidcapError):
    """Malformed file content (bad magic, truncation, wrong field width)."""


class ConfigError(VidcapError):
    """Invalid or inconsistent run configuration."""


class ConsistencyError(VidcapError):
    """Mismatched companion objects (e.g. trace produced by different params)."""


class NumericError(VidcapError):
    """Non-finite value where a finite one is required."""
