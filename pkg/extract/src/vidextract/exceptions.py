class ExtractError(Exception):
    """Base for everything vidextract raises on purpose."""


class JobError(ExtractError):
    """A per-video extraction job cannot run (unreadable or empty input,
    bad parameters)."""
