"""Exception types raised by the synchronization pipeline."""


class ParameterError(ValueError):
    """A structural or numeric parameter is out of its valid range."""


class InsufficientDataError(RuntimeError):
    """Too few detections (or too short a stream) for the requested analysis."""


class NoSpectralPeakError(RuntimeError):
    """The periodogram shows no peak above the noise floor.

    Usually means the input timestamps are not a pulsed stream at the
    expected rate (desynchronized or pure noise).
    """


class UnwrapError(RuntimeError):
    """Phase unwrapping failed: the coarse period is too far off, so the
    phase drifts by more than half a period within one segment."""


class MissingDetectorError(RuntimeError):
    """One or more detector channels have too few events for a per-channel fit."""

    def __init__(self, labels):
        self.labels = tuple(labels)
        super().__init__(f"insufficient events for detector(s): {', '.join(self.labels)}")


class EmptyGateError(RuntimeError):
    """All detections fell outside the acceptance gate (bad period or phase)."""


class LayoutMismatchError(ValueError):
    """Received-string length or layout does not match the frame structure."""


class ZeroSiftedError(RuntimeError):
    """No basis-matched random-slot detections available for error-rate estimation."""
