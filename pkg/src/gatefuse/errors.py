"""Exception hierarchy and non-fatal diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field


class GatefuseError(Exception):
    """Base class for all errors raised by this package."""


class MalformedFile(GatefuseError):
    """A stream or probe file violates its documented schema."""


class UnknownDevice(GatefuseError):
    """No timestamp policy entry exists for a device."""


class InvalidResponse(GatefuseError):
    """Probe response token outside {1..5, X}."""


class ExcludedProbe(GatefuseError):
    """A window was requested for a probe marked as external interruption."""


class EmptyVideo(GatefuseError):
    """Video progress requested for a video with no probes."""


class EmptyTrainingSet(GatefuseError):
    """A fit operation received no training rows."""


class InfeasibleSplit(GatefuseError):
    """No label-covering participant partition found within the attempt budget."""


class FoldMismatch(GatefuseError):
    """A fitted object was applied to a fold it was not fitted for."""


class OutOfRange(GatefuseError):
    """A label or score lies outside its declared range."""


class ShapeMismatch(GatefuseError):
    """An array does not match the shape required by the model."""


class NonFiniteValue(GatefuseError):
    """A value that must be finite is NaN or infinite."""


class NonFiniteLoss(GatefuseError):
    """Training diverged: the loss became NaN or infinite."""


class EmptyHistogram(GatefuseError):
    """A label histogram with zero total count."""


class SingularSystem(GatefuseError):
    """The regularized normal equations could not be solved."""


class LengthMismatch(GatefuseError):
    """Prediction and label arrays differ in length."""


class ExcludedRecord(GatefuseError):
    """Normalized gain is undefined (pre-score at the maximum)."""


class InsufficientVideos(GatefuseError):
    """Too few videos with defined means for a correlation."""


class ConfigInvalid(GatefuseError):
    """A run or generator configuration violates its invariants."""


class MissingCohort(GatefuseError):
    """A cohort directory lacks the files this module expects."""


@dataclass
class Diagnostic:
    """Non-fatal finding emitted while processing a stream or session.

    Codes in use: ``rate_mismatch`` (reconstructed packet run overlaps the
    next packet by more than one sample period), ``coverage_gap`` (a stream
    does not span the session interval declared in the manifest).
    """

    code: str
    message: str
    context: dict = field(default_factory=dict)

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"
