"""Exception hierarchy shared across the benchmarking toolkit."""

from __future__ import annotations


class BenchError(Exception):
    """Base class for every error raised by this package."""


# --- power sampling ---------------------------------------------------------

class PermissionDenied(BenchError):
    """Energy counter files exist but are unreadable; rerun with privileges."""


class DomainMismatch(BenchError):
    """Counter readings from different energy domains were combined."""


class ProviderFailure(BenchError):
    """A power provider failed mid-session.

    Carries the partial trace collected up to the failure in
    ``partial_trace`` (may be None when the failure happened before any
    complete sampling interval).
    """

    def __init__(self, message: str, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace


class InsufficientSamples(BenchError):
    """A measurement window produced too few samples to be usable."""


class SessionActive(BenchError):
    """A sampling session is already running in this process."""


# --- measurement protocol ---------------------------------------------------

class WorkloadActive(BenchError):
    """An idle baseline was requested while a workload is being measured."""


class TaskFailed(BenchError):
    """A measured workload failed; ``runs`` holds measurements so far."""

    def __init__(self, message: str, runs=()):
        super().__init__(message)
        self.runs = tuple(runs)


class StaleBaseline(BenchError):
    """The stored idle baseline is too old or from a different host."""


class LockContention(BenchError):
    """Another measurement campaign holds the machine-wide lock."""


# --- codec harness ----------------------------------------------------------

class OutOfRange(BenchError):
    """A quantization parameter fell outside its codec's scale."""


class UnresolvedPlaceholder(BenchError):
    """A command template contains placeholders that cannot be resolved."""


class MissingBinary(BenchError):
    """The codec or tool executable could not be found."""


class CodecFailure(BenchError):
    """A codec subprocess exited with an error; stderr is attached."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class ZeroDuration(BenchError):
    """Bitrate requested for a clip with no duration."""


# --- quality metrics --------------------------------------------------------

class SizeMismatch(BenchError):
    """A raw video file does not match its declared geometry."""


class DimensionMismatch(BenchError):
    """Two planes being compared have different dimensions."""


class ToolMissing(BenchError):
    """The external quality tool is not installed or not configured."""


class ToolFailure(BenchError):
    """The external quality tool exited with an error."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class ParseError(BenchError):
    """Output of an external tool could not be parsed."""


class TooFewFrames(BenchError):
    """An operation needs more frames than the sequence provides."""


# --- curve analysis ---------------------------------------------------------

class DegenerateRates(BenchError):
    """All rate values coincide; no line can be fitted."""


class NoOverlap(BenchError):
    """Two curves share no rate interval."""


class TooFewPoints(BenchError):
    """A curve has fewer points than the operation requires."""


class NonFiniteQuality(BenchError):
    """A curve contains NaN/inf (or absent) quality values."""


class RaggedCurves(BenchError):
    """Curves being averaged have differing point counts."""


# --- orchestration ----------------------------------------------------------

class ValidationError(BenchError):
    """Configuration is invalid; ``errors`` lists field-level messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class MissingAnchor(BenchError):
    """No usable anchor-codec records to compute deltas against."""


class MixedFingerprints(BenchError):
    """Records from different hosts cannot be merged without --force-merge."""


class EmptyReport(BenchError):
    """A report with no rows cannot be emitted."""
