"""Exception types raised across the package."""


class VoicestabError(Exception):
    """Base class for all errors raised by this package."""


class InvalidAudio(VoicestabError):
    """Audio input is empty, non-finite, or otherwise unusable."""


class ParamMismatch(VoicestabError):
    """Clip and spectrogram parameters disagree (e.g. sample rate)."""


class InvalidParam(VoicestabError):
    """A configuration value is out of its documented range."""


class DegenerateFilterbank(VoicestabError):
    """A mel filter ended up with no positive weight at the FFT resolution."""


class InvalidMaskWidth(VoicestabError):
    """Requested mask width exceeds the spectrogram's extent."""


class AlreadyAugmented(VoicestabError):
    """Refused to augment a spectrogram that is already augmented."""


class InsufficientSubjects(VoicestabError):
    """Too few subjects for a subject-atomic three-way split."""


class UnsatisfiableSplit(VoicestabError):
    """No subject-atomic assignment can approach the requested fractions."""


class MissingSpectrogram(VoicestabError):
    """A manifest entry references a spectrogram file that does not exist."""

    def __init__(self, clip_id: str, path: str = ""):
        self.clip_id = clip_id
        self.path = path
        super().__init__(f"missing spectrogram for clip {clip_id!r}: {path}")


class ShapeError(VoicestabError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericalError(VoicestabError):
    """A non-finite value appeared where a finite one is required.

    Carries the partial training ``history`` when raised by the train loop.
    """

    def __init__(self, message: str, history=None):
        self.history = history if history is not None else []
        super().__init__(message)


class LabelError(VoicestabError):
    """Labels are not valid one-hot rows."""


class BatchTooSmall(VoicestabError):
    """Batch statistics require at least two samples in training mode."""


class CutPointError(VoicestabError):
    """The named cut point does not exist in the checkpointed graph."""


class CorruptCheckpoint(VoicestabError):
    """Checkpoint bytes fail CRC, probe, or structural validation."""


class UnsupportedVersion(VoicestabError):
    """Checkpoint format version is not understood by this build."""


class IoError(VoicestabError):
    """File could not be written or read."""


class DegenerateLabels(VoicestabError):
    """ROC analysis needs both classes present."""


class InputError(VoicestabError):
    """Metric inputs are malformed (length mismatch, all-zero matrix, ...)."""


class LeakageRefusal(VoicestabError):
    """Training refused to start because the manifest fails leakage checks."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        super().__init__(f"manifest fails leakage checks: {lines}")


class MissingCheckpoint(VoicestabError):
    """A phase-3 run requires a phase-2 checkpoint that is absent."""


class ConfigError(VoicestabError):
    """Experiment config file is malformed or contains unknown keys."""
