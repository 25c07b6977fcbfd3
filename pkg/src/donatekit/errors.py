"""Exception hierarchy shared across the toolkit.

Every error raised on a documented failure path derives from DonateKitError
so callers (and the CLI) can distinguish toolkit failures from bugs.
"""


class DonateKitError(Exception):
    """Base class for all toolkit errors."""


class ArchiveError(DonateKitError):
    """Archive is missing, unreadable, or not a valid zip."""


class AmbiguousProviderError(DonateKitError):
    """More than one provider signature matched; detection refuses to guess."""


class TimestampError(DonateKitError):
    """Raw timestamp string could not be normalized."""

    def __init__(self, raw: str, reason: str = "unparseable timestamp"):
        super().__init__(f"{reason}: {raw!r}")
        self.raw = raw


class SchemaError(DonateKitError):
    """Archive does not match the expected fixture schema."""


class NoCandidatesError(DonateKitError):
    """Semantic location selection was given an empty candidate list."""


class NoHomeError(DonateKitError):
    """Home inference found no usable night pings."""


class SingularMatrixError(DonateKitError):
    """Confusion matrix is not invertible; counts cannot be corrected."""


class FrameMismatchError(DonateKitError):
    """Respondents fall in a stratum that does not exist in the frame."""


class EstimationError(DonateKitError):
    """Estimator was given no usable observations."""


class DesignError(DonateKitError):
    """Study design is infeasible (e.g. sample larger than the frame)."""


class LinkageError(DonateKitError):
    """Record linkage failed (e.g. colliding values for one key)."""


class ConsentStateError(DonateKitError):
    """Operation violates the consent session state machine."""


class UnknownVariableError(DonateKitError):
    """Variable is not part of the consent session."""


class TamperError(DonateKitError):
    """Donation package bytes do not match their checksum."""


class ConfigError(DonateKitError):
    """Study or fixture configuration is invalid."""
