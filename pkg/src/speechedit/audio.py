"""Waveform container, WAV I/O, resampling, crossfades and A-weighted loudness."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioFormatError, LoudnessError, UnsupportedEncodingError

PIPELINE_RATE = 16000
HOP_SECONDS = 0.010

# Gain bounds for loudness matching; keeps near-silent pastes from blowing up.
GAIN_CLAMP = (0.25, 4.0)

# IEC 61672 analog A-weighting prototype constants.
_A_F1 = 20.598997
_A_F2 = 107.65265
_A_F3 = 737.86223
_A_F4 = 12194.217


@dataclass(frozen=True)
class Waveform:
    """Mono audio buffer with its sample rate. Samples are float64 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("Waveform requires a 1-D sample buffer")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice_samples(self, start: int, stop: int) -> "Waveform":
        if not (0 <= start <= stop <= len(self.samples)):
            raise ValueError(f"span [{start}, {stop}) outside waveform of {len(self)}")
        return Waveform(self.samples[start:stop].copy(), self.sample_rate)

    def seconds_to_samples(self, t: float) -> int:
        return int(round(t * self.sample_rate))


@dataclass(frozen=True)
class FrameGrid:
    """10 ms analysis frames over a sample region starting at origin_sample."""

    frame_count: int
    origin_sample: int = 0
    hop_seconds: float = HOP_SECONDS
    sample_rate: int = PIPELINE_RATE

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_seconds * self.sample_rate))

    @classmethod
    def for_region(cls, region_samples: int, origin_sample: int = 0,
                   sample_rate: int = PIPELINE_RATE) -> "FrameGrid":
        hop = int(round(HOP_SECONDS * sample_rate))
        return cls(frame_count=math.ceil(region_samples / hop),
                   origin_sample=origin_sample, sample_rate=sample_rate)

    def frame_slice(self, i: int) -> tuple[int, int]:
        start = self.origin_sample + i * self.hop_samples
        return start, start + self.hop_samples

    def sample_to_frame(self, sample: int) -> int:
        return (sample - self.origin_sample) // self.hop_samples


def frame_count_for_duration(duration_seconds: float, hop: float = HOP_SECONDS) -> int:
    """Frame-count law used by prosody targets: round(total duration / hop)."""
    return int(round(duration_seconds / hop))


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file (PCM16 or float32, any channel count) as mono."""
    try:
        with open(path, "rb") as fh:
            return wav_from_bytes(fh.read())
    except (FileNotFoundError, PermissionError):
        raise
    except AudioFormatError:
        raise


def wav_from_bytes(data: bytes) -> Waveform:
    """Decode WAV bytes; channels are averaged, PCM16 scaled by 1/32768."""
    try:
        rate, samples = wavfile.read(io.BytesIO(data))
    except Exception as exc:
        raise AudioFormatError(f"not a readable RIFF/WAVE stream: {exc}") from exc
    if samples.dtype == np.int16:
        mono = samples.astype(np.float64) / 32768.0
    elif samples.dtype == np.float32:
        mono = samples.astype(np.float64)
    else:
        raise UnsupportedEncodingError(
            f"unsupported sample encoding {samples.dtype}; need PCM16 or float32")
    if mono.ndim == 2:
        mono = mono.mean(axis=1)
    return Waveform(mono, int(rate))


def save_wav(path, w: Waveform) -> None:
    """Write mono PCM16."""
    with open(path, "wb") as fh:
        fh.write(wav_to_bytes(w))


def wav_to_bytes(w: Waveform) -> bytes:
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    buf = io.BytesIO()
    wavfile.write(buf, w.sample_rate, pcm)
    return buf.getvalue()


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited polyphase resampling; output length = round(n * target / source)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(target_rate, w.sample_rate)
    out = resample_poly(w.samples, ratio.numerator, ratio.denominator,
                        window=("kaiser", 8.0))
    n_target = int(round(len(w.samples) * target_rate / w.sample_rate))
    if len(out) > n_target:
        out = out[:n_target]
    elif len(out) < n_target:
        out = np.pad(out, (0, n_target - len(out)))
    return Waveform(out, target_rate)


def equal_power_crossfade(a: Waveform, b: Waveform,
                          overlap_seconds: float = 0.020) -> Waveform:
    """Join a and b with a constant-power cos/sin fade over the overlap."""
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample-rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    n = int(round(overlap_seconds * a.sample_rate))
    if n > len(a) or n > len(b):
        raise ValueError(f"overlap of {n} samples longer than an input "
                         f"({len(a)}, {len(b)})")
    if n == 0:
        return Waveform(np.concatenate([a.samples, b.samples]), a.sample_rate)
    gain_out, gain_in = crossfade_gains(n)
    mixed = gain_out * a.samples[-n:] + gain_in * b.samples[:n]
    out = np.concatenate([a.samples[:-n], mixed, b.samples[n:]])
    return Waveform(out, a.sample_rate)


def crossfade_gains(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(cos, sin) gain pair with the angle sweeping 0 -> pi/2 across n samples."""
    if n == 1:
        theta = np.array([math.pi / 4])
    else:
        theta = np.linspace(0.0, math.pi / 2, n)
    return np.cos(theta), np.sin(theta)


def a_weighting_gain(freqs_hz: np.ndarray) -> np.ndarray:
    """Linear A-weighting magnitude, normalized to exactly 1.0 at 1 kHz."""
    f = np.asarray(freqs_hz, dtype=np.float64)
    f2 = f * f
    num = (_A_F4 ** 2) * f2 * f2
    den = ((f2 + _A_F1 ** 2)
           * np.sqrt((f2 + _A_F2 ** 2) * (f2 + _A_F3 ** 2))
           * (f2 + _A_F4 ** 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        response = np.where(den > 0, num / den, 0.0)
    return response / _A_REF


def _a_weighting_raw(freq_hz: float) -> float:
    f2 = freq_hz * freq_hz
    num = (_A_F4 ** 2) * f2 * f2
    den = ((f2 + _A_F1 ** 2)
           * math.sqrt((f2 + _A_F2 ** 2) * (f2 + _A_F3 ** 2))
           * (f2 + _A_F4 ** 2))
    return num / den


_A_REF = _a_weighting_raw(1000.0)


def a_weighting_db(freqs_hz) -> np.ndarray:
    """A-weighting curve in dB (0 dB at 1 kHz by construction)."""
    gain = a_weighting_gain(np.asarray(freqs_hz, dtype=np.float64))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(gain)


def a_weighted_rms(w: Waveform, region: tuple[int, int] | None = None) -> float:
    """Linear RMS of the region after A-weighting applied on the FFT grid."""
    if region is None:
        region = (0, len(w))
    start, stop = region
    if not (0 <= start < stop <= len(w)):
        raise ValueError(f"region [{start}, {stop}) outside waveform of {len(w)}")
    n = stop - start
    if n < int(round(0.010 * w.sample_rate)):
        raise ValueError(f"region of {n} samples shorter than 10 ms")
    x = w.samples[start:stop]
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, d=1.0 / w.sample_rate)
    weighted = spectrum * a_weighting_gain(freqs)
    # Parseval: sum(x^2) = (|X0|^2 + 2*sum|Xk|^2 [+ |X_nyq|^2 unpaired]) / n
    mags = np.abs(weighted) ** 2
    total = mags[0] + 2.0 * mags[1:].sum()
    if n % 2 == 0:
        total -= mags[-1]
    return math.sqrt(max(total, 0.0)) / n


def match_loudness(segment: Waveform, reference_rms: float,
                   clamp: tuple[float, float] = GAIN_CLAMP) -> tuple[Waveform, float]:
    """Scale segment so its A-weighted RMS matches the reference, within the clamp."""
    if reference_rms <= 0:
        raise LoudnessError("reference RMS must be positive")
    rms = a_weighted_rms(segment)
    if rms <= 0:
        raise LoudnessError("cannot match loudness of a silent segment")
    gain = min(max(reference_rms / rms, clamp[0]), clamp[1])
    if gain == 1.0:
        return segment, 1.0
    return Waveform(segment.samples * gain, segment.sample_rate), gain
