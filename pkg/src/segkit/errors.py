"""Exception types shared across the toolkit."""


class SegkitError(Exception):
    """Base class for all toolkit errors."""


class ParseError(SegkitError):
    """An input file is not well-formed (bad JSON, wrong top-level shape)."""


class ValidationError(SegkitError):
    """Parsed data violates a contract: dangling references, bad sizes,
    out-of-range scores, malformed segmentations."""
