"""Exception hierarchy for the pipeline"""


class RegKGError(Exception):
    """Base class for all pipeline errors"""


class InvalidArgumentError(RegKGError, ValueError):
    """An argument is outside its documented domain"""


class TocNotFoundError(RegKGError):
    """No page of the bundle looks like a table of contents"""


class TocUnparseableError(RegKGError):
    """The table of contents page yields fewer than two entries"""


class EmptySegmentError(RegKGError, ValueError):
    """A prompt was requested for a segment with no content"""


class ParseFailureError(RegKGError):
    """A completion body could not be parsed, even after repair"""


class BackendError(RegKGError):
    """Transport or protocol failure talking to a completion backend"""


class BackendAuthError(BackendError):
    """The completion backend rejected our credentials"""


class ExtractionFailedError(RegKGError):
    """Every segment of a document failed extraction"""


class MissingRuleError(RegKGError, KeyError):
    """A schema-compliance computation is missing one of VR001-VR006"""


class UnknownFormatError(RegKGError, ValueError):
    """Unsupported export format"""


class ConfigError(RegKGError):
    """Pipeline configuration is missing or invalid"""


class ArtifactError(RegKGError):
    """A stage artifact is unreadable or has the wrong shape"""
