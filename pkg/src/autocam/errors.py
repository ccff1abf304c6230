"""Exception hierarchy shared by the autocam modules.

Each error class maps to a distinct process exit code so shell callers can
tell failure classes apart without parsing stderr.
"""


class AutocamError(Exception):
    """Base class for all autocam errors."""

    exit_code = 1


class ConfigError(AutocamError):
    """Run configuration is malformed or carries unknown keys."""

    exit_code = 2


class ImageTooSmall(AutocamError):
    """Image (or the result of an operation on it) is below the minimum size."""

    exit_code = 3


class DegenerateStack(AutocamError):
    """Exposure stack cannot determine a response curve (e.g. identical frames)."""

    exit_code = 4


class NonMonotoneFit(AutocamError):
    """Fitted response table needed more than a small monotonicity correction."""

    exit_code = 5


class OutOfRange(AutocamError):
    """Requested camera attribute lies outside the calibrated/configured range."""

    exit_code = 6


class SingularKernel(AutocamError):
    """GP kernel matrix stayed non-positive-definite after jitter escalation."""

    exit_code = 7


class CaptureFailed(AutocamError):
    """Camera backend failed to deliver a frame."""

    exit_code = 8


class MissingSidecar(AutocamError):
    """Image file has no JSON sidecar with capture metadata."""

    exit_code = 9


class CorruptImage(AutocamError):
    """Image file exists but cannot be decoded."""

    exit_code = 10


class IoError(AutocamError):
    """Filesystem read/write failed."""

    exit_code = 11
