"""Exception taxonomy shared across the package.

Everything raised deliberately derives from FacetError so the CLI can map
failures to documented exit codes (2 usage, 3 io/format, 4 budget).
"""


class FacetError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(FacetError, ValueError):
    """Array shapes or image geometry do not match what an operation needs."""


class ModeError(FacetError, ValueError):
    """Operation applied to an image with the wrong channel mode."""


class FormatError(FacetError, ValueError):
    """A file or wire payload violates its format; names the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnsupportedVersionError(FormatError):
    """A format version this build does not understand."""

    def __init__(self, version):
        super().__init__("version", f"unsupported version {version}")
        self.version = version


class DegenerateInputError(FacetError, ValueError):
    """Numerically degenerate input, e.g. a zero vector where a direction is needed."""


class UnknownIdentityError(FacetError, LookupError):
    """Scoring was requested against an identity that was never enrolled."""


class BudgetExhaustedError(FacetError, RuntimeError):
    """The query budget cannot admit the attempted batch.

    Carries the accounting triple: `used` queries so far, the `limit`, and the
    `attempted` batch size that was rejected (whole, never partially scored).
    """

    def __init__(self, used, limit, attempted):
        super().__init__(
            f"query budget exhausted: used={used} limit={limit} attempted={attempted}"
        )
        self.used = used
        self.limit = limit
        self.attempted = attempted


class TransportError(FacetError, ConnectionError):
    """A remote oracle could not be reached or answered unintelligibly."""


class ConfigError(FacetError, ValueError):
    """Invalid or inconsistent run configuration."""
