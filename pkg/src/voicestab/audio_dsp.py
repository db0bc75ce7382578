"""Raw audio to normalized mel-spectrogram arrays.

The pipeline is: peak-normalize the clip, compute a windowed STFT
magnitude, square it to a power spectrogram, project through a triangular
mel filterbank, then dB-scale against the per-clip maximum and map the
[db_floor, 0] range affinely onto [0, 1].

All functions are pure; none hold state between calls.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateFilterbank,
    InvalidAudio,
    InvalidParam,
    ParamMismatch,
)

_TINY = 1e-30  # guards log10 against exact zeros


class Label(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"

    @classmethod
    def from_string(cls, s: str) -> "Label":
        return cls(s.lower())


# class index used for one-hot targets and argmax decoding;
# UNSTABLE is the positive class throughout evaluation
LABEL_INDEX = {Label.STABLE: 0, Label.UNSTABLE: 1}
INDEX_LABEL = {v: k for k, v in LABEL_INDEX.items()}


@dataclass
class AudioClip:
    """A labeled, subject-attributed PCM segment."""

    samples: np.ndarray  # float64 amplitudes in [-1, 1]
    sample_rate: int
    subject_id: str
    label: Label
    clip_id: str

    @property
    def duration_samples(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class SpectrogramParams:
    """STFT and mel-projection configuration.

    Defaults are the canonical configuration: two-second 48 kHz clips
    yield a 128 x 188 array.
    """

    sample_rate: int = 48000
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 8000.0
    window: str = "hann"  # "hann" | "rectangular"
    center_pad: bool = True
    db_floor: float = -80.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise InvalidParam(f"sample_rate must be positive, got {self.sample_rate}")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise InvalidParam(
                f"need 0 <= f_min < f_max <= sample_rate/2, got "
                f"f_min={self.f_min}, f_max={self.f_max}, sr={self.sample_rate}"
            )
        if self.hop > self.n_fft or self.hop <= 0:
            raise InvalidParam(f"need 0 < hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}")
        if self.n_mels < 1:
            raise InvalidParam(f"n_mels must be >= 1, got {self.n_mels}")
        if self.window not in ("hann", "rectangular"):
            raise InvalidParam(f"unknown window {self.window!r}")
        if self.db_floor >= 0:
            raise InvalidParam(f"db_floor must be negative, got {self.db_floor}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, duration_samples: int) -> int:
        if self.center_pad:
            return 1 + duration_samples // self.hop
        return 1 + max(0, duration_samples - self.n_fft) // self.hop

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "n_fft": self.n_fft,
            "hop": self.hop,
            "n_mels": self.n_mels,
            "f_min": self.f_min,
            "f_max": self.f_max,
            "window": self.window,
            "center_pad": self.center_pad,
            "db_floor": self.db_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrogramParams":
        return cls(**d)


@dataclass
class MelSpectrogram:
    """2-D time-frequency array plus its generation parameters."""

    data: np.ndarray  # float32 [n_mels, n_frames], values in [0, 1]
    params: SpectrogramParams
    source_clip_id: str
    augmented: bool = False
    subject_id: str | None = None
    label: Label | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_mels(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[1])

    def copy(self) -> "MelSpectrogram":
        return replace(self, data=self.data.copy(), meta=dict(self.meta))


def normalize_clip(
    raw, sample_rate: int, subject_id: str, label: Label, clip_id: str
) -> AudioClip:
    """Peak-normalize raw samples and attach metadata.

    The peak absolute amplitude of the result is 1; an all-zero input is
    returned unchanged rather than rejected so degenerate clips cannot
    poison a batch.
    """
    samples = np.asarray(raw, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise InvalidAudio("clip must be a non-empty 1-D sample sequence")
    if sample_rate <= 0:
        raise InvalidAudio(f"sample_rate must be positive, got {sample_rate}")
    if not np.all(np.isfinite(samples)):
        raise InvalidAudio("clip contains non-finite samples")
    peak = np.max(np.abs(samples))
    if peak > 0:
        samples = samples / peak
    return AudioClip(
        samples=samples,
        sample_rate=int(sample_rate),
        subject_id=subject_id,
        label=label,
        clip_id=clip_id,
    )


def fit_duration(clip: AudioClip, duration_samples: int) -> AudioClip:
    """Force a clip to a fixed length: zero-pad short, truncate long."""
    n = clip.duration_samples
    if n == duration_samples:
        return clip
    if n > duration_samples:
        samples = clip.samples[:duration_samples]
    else:
        samples = np.concatenate([clip.samples, np.zeros(duration_samples - n)])
    return replace(clip, samples=samples)


def _window(params: SpectrogramParams) -> np.ndarray:
    n = params.n_fft
    if params.window == "hann":
        # periodic Hann, the spectral-analysis convention
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))
    return np.ones(n)


def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflect-pad that stays total for signals shorter than the pad."""
    if pad == 0:
        return x
    if x.size == 1:
        return np.pad(x, pad, mode="edge")
    out = x
    remaining = pad
    while remaining > 0:
        step = min(remaining, out.size - 1)
        out = np.pad(out, step, mode="reflect")
        remaining -= step
    return out


def frame_signal(samples: np.ndarray, params: SpectrogramParams) -> np.ndarray:
    """Slice a signal into overlapping frames [n_frames, n_fft]."""
    x = np.asarray(samples, dtype=np.float64)
    n_frames = params.n_frames(x.size)
    if params.center_pad:
        x = _reflect_pad(x, params.n_fft // 2)
    needed = (n_frames - 1) * params.hop + params.n_fft
    if x.size < needed:
        x = np.concatenate([x, np.zeros(needed - x.size)])
    idx = np.arange(params.n_fft)[None, :] + params.hop * np.arange(n_frames)[:, None]
    return x[idx]


def stft_magnitude(clip: AudioClip, params: SpectrogramParams) -> np.ndarray:
    """Windowed STFT magnitude, shape [n_fft/2 + 1, n_frames]."""
    if clip.sample_rate != params.sample_rate:
        raise ParamMismatch(
            f"clip at {clip.sample_rate} Hz but params expect {params.sample_rate} Hz"
        )
    if clip.duration_samples < 1:
        raise InvalidAudio("empty clip")
    frames = frame_signal(clip.samples, params)
    spectrum = np.fft.rfft(frames * _window(params)[None, :], n=params.n_fft, axis=1)
    return np.abs(spectrum).T


def hz_to_mel(f):
    """HTK mel scale: 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(params: SpectrogramParams) -> np.ndarray:
    """Triangular, unnormalized mel filterbank [n_mels, n_fft/2 + 1].

    Row peaks move strictly upward in frequency; every filter must keep at
    least one strictly positive weight, otherwise the band count is too
    high for the FFT resolution and DegenerateFilterbank is raised.
    """
    mel_pts = np.linspace(hz_to_mel(params.f_min), hz_to_mel(params.f_max), params.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(params.n_bins) * (params.sample_rate / params.n_fft)

    lower = hz_pts[:-2][:, None]
    center = hz_pts[1:-1][:, None]
    upper = hz_pts[2:][:, None]
    rising = (bin_freqs[None, :] - lower) / np.maximum(center - lower, _TINY)
    falling = (upper - bin_freqs[None, :]) / np.maximum(upper - center, _TINY)
    fb = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.where(~(fb > 0).any(axis=1))[0]
    if empty.size:
        raise DegenerateFilterbank(
            f"{empty.size} of {params.n_mels} mel filters have no positive weight "
            f"(first empty index {empty[0]}); reduce n_mels or increase n_fft"
        )
    return fb


def normalize_db(power: np.ndarray, db_floor: float) -> np.ndarray:
    """Max-referenced dB scaling clamped at db_floor, mapped onto [0, 1].

    An all-zero input maps to all zeros.
    """
    p = np.asarray(power, dtype=np.float64)
    if np.any(p < 0):
        raise InvalidParam("power spectrogram must be non-negative")
    max_p = p.max() if p.size else 0.0
    if max_p <= 0:
        return np.zeros_like(p)
    db = 10.0 * np.log10(np.maximum(p, _TINY) / max_p)
    db = np.clip(db, db_floor, 0.0)
    return (db - db_floor) / (-db_floor)


def mel_spectrogram(clip: AudioClip, params: SpectrogramParams) -> MelSpectrogram:
    """Full pipeline: STFT -> power -> mel projection -> dB normalization."""
    magnitude = stft_magnitude(clip, params)
    power = magnitude**2
    fb = mel_filterbank(params)
    data = normalize_db(fb @ power, params.db_floor)
    return MelSpectrogram(
        data=data.astype(np.float32),
        params=params,
        source_clip_id=clip.clip_id,
        augmented=False,
        subject_id=clip.subject_id,
        label=clip.label,
    )


# ---------------------------------------------------------------------------
# audio / image I/O


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono or stereo WAV file (PCM16 or float32) as float64 mono."""
    from scipy.io import wavfile

    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise InvalidAudio(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InvalidAudio(f"unsupported WAV sample format {data.dtype}")
    return samples, int(sr)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as a PCM16 mono WAV file."""
    from scipy.io import wavfile

    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(path, int(sample_rate), pcm)


def export_png(spec: MelSpectrogram, path) -> None:
    """Export a spectrogram as 8-bit grayscale PNG (row 0 = lowest band)."""
    from PIL import Image

    img = np.round(np.clip(spec.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
