"""TD-PSOLA: epoch detection, rate maps, and overlap-add resynthesis."""
from __future__ import annotations

import math
import subprocess
from dataclasses import dataclass

import numpy as np

from .audio import HOP_SECONDS, Waveform, wav_from_bytes, wav_to_bytes
from .errors import (
    AudioFormatError,
    ExternalProcessError,
    ExternalSchemaError,
    ExternalTimeoutError,
)
from .pitch import F0_MAX, F0_MIN, PitchContour

RATE_CLAMP = (0.25, 4.0)
_WINDOW_SUM_FLOOR = 1e-3


@dataclass(frozen=True)
class EpochSequence:
    """Pitch marks (region-relative sample indices) with per-epoch voicing."""

    indices: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if len(idx) and np.any(np.diff(idx) <= 0):
            raise ValueError("epoch indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "voiced", np.asarray(self.voiced, dtype=bool))

    def __len__(self) -> int:
        return len(self.indices)


def _region_frames(region_samples: int, hop: int) -> int:
    return math.ceil(region_samples / hop)


def detect_epochs(w: Waveform, region: tuple[int, int],
                  contour: PitchContour) -> EpochSequence:
    """Place pitch marks on waveform maxima, one per period in voiced spans.

    Voiced frames search +-25% of the local period around the predicted next
    mark; unvoiced frames advance on a fixed 10 ms grid.
    """
    fs = w.sample_rate
    start, stop = region
    n = stop - start
    hop = int(round(HOP_SECONDS * fs))
    frames = _region_frames(n, hop)
    if len(contour) != frames:
        raise ValueError(f"contour has {len(contour)} frames, region needs {frames}")
    x = w.samples[start:stop]

    def frame_of(pos: int) -> int:
        return min(max(pos // hop, 0), frames - 1)

    def period_at(pos: int) -> tuple[int, bool]:
        f = frame_of(pos)
        if contour.voiced[f]:
            return max(int(round(fs / contour.f0[f])), 2), True
        return hop, False

    marks: list[int] = []
    flags: list[bool] = []
    period0, voiced0 = period_at(0)
    if voiced0:
        first = int(np.argmax(x[:min(period0, n)]))
    else:
        first = 0
    marks.append(first)
    flags.append(voiced0)

    while True:
        prev = marks[-1]
        period, voiced = period_at(prev)
        predicted = prev + period
        if predicted >= n:
            break
        if voiced:
            radius = max(period // 4, 1)
            lo = max(predicted - radius, prev + 1)
            hi = min(predicted + radius + 1, n)
            if lo >= hi:
                break
            nxt = lo + int(np.argmax(x[lo:hi]))
        else:
            nxt = predicted
        marks.append(nxt)
        flags.append(period_at(nxt)[1])
    return EpochSequence(np.array(marks), np.array(flags))


def build_rate_map(original_durations, target_durations,
                   hop_seconds: float = HOP_SECONDS) -> np.ndarray:
    """Per-frame stretch ratios: target/original repeated over each phoneme's
    original frame count, clamped to the rate bounds."""
    if len(original_durations) != len(target_durations):
        raise ValueError("duration sequences must have equal length")
    pieces = []
    for orig, target in zip(original_durations, target_durations):
        if orig <= 0:
            raise ValueError("original durations must be positive")
        frames = int(round(orig / hop_seconds))
        ratio = min(max(target / orig, RATE_CLAMP[0]), RATE_CLAMP[1])
        pieces.append(np.full(frames, ratio))
    if not pieces:
        return np.zeros(0)
    return np.concatenate(pieces)


def fit_map_to_frames(values: np.ndarray, frames: int) -> np.ndarray:
    """Pad (edge) or truncate a per-frame map to the region's frame count."""
    if len(values) == frames:
        return values
    if len(values) > frames:
        return values[:frames]
    if len(values) == 0:
        raise ValueError("cannot fit an empty map")
    return np.concatenate([values, np.full(frames - len(values), values[-1])])


def _chunk_bounds(indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left/right half-window lengths: the spacing to each neighbor epoch."""
    n = len(indices)
    left = np.empty(n, dtype=np.int64)
    right = np.empty(n, dtype=np.int64)
    if n == 1:
        left[0] = right[0] = 160
        return left, right
    gaps = np.diff(indices)
    left[1:] = gaps
    left[0] = gaps[0]
    right[:-1] = gaps
    right[-1] = gaps[-1]
    return left, right


def _half_hann(length: int, rising: bool) -> np.ndarray:
    t = np.arange(length)
    if rising:
        return 0.5 - 0.5 * np.cos(math.pi * t / length)
    return 0.5 + 0.5 * np.cos(math.pi * t / length)


def synthesize(w: Waveform, region: tuple[int, int], epochs: EpochSequence,
               shift: np.ndarray, rate: np.ndarray) -> Waveform:
    """Overlap-add resynthesis imposing the shift and rate maps on the region.

    Both maps are per-10 ms-frame on the original region grid; shift holds
    target f0 in Hz with NaN marking unvoiced frames. Synthesis marks advance
    by the target period through a timeline scaled by the rate map, each
    pulling the nearest analysis chunk (monotonically) under the time mapping.
    """
    fs = w.sample_rate
    start, stop = region
    n = stop - start
    hop = int(round(HOP_SECONDS * fs))
    frames = _region_frames(n, hop)
    shift = np.asarray(shift, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    if len(shift) != frames or len(rate) != frames:
        raise ValueError(f"maps must cover {frames} frames "
                         f"(got shift {len(shift)}, rate {len(rate)})")
    if len(epochs) == 0:
        raise ValueError("cannot synthesize from an empty epoch sequence")
    rate = np.clip(rate, *RATE_CLAMP)
    x = w.samples[start:stop]

    # Cumulative output time of each frame boundary (in samples, fractional).
    frame_out = np.concatenate([[0.0], np.cumsum(hop * rate)])
    out_len = int(round(frame_out[-1]))

    def to_output(u: float) -> float:
        f = min(int(u // hop), frames - 1)
        return frame_out[f] + (u - f * hop) * rate[f]

    def to_original(s: float) -> float:
        f = min(int(np.searchsorted(frame_out, s, side="right")) - 1, frames - 1)
        f = max(f, 0)
        return f * hop + (s - frame_out[f]) / rate[f]

    def target_spacing(s: float) -> float:
        u = to_original(s)
        f = min(max(int(u // hop), 0), frames - 1)
        f0 = shift[f]
        if np.isfinite(f0):
            f0 = min(max(f0, F0_MIN), F0_MAX)
            return fs / f0
        return float(hop)

    anchor = to_output(float(epochs.indices[0]))
    marks = [anchor]
    s = anchor
    while True:
        s = s + target_spacing(s)
        if s >= out_len:
            break
        marks.append(s)
    s = anchor
    while True:
        spacing = target_spacing(max(s - 1.0, 0.0))
        s = s - spacing
        if s < 0:
            break
        marks.append(s)
    marks.sort()

    left, right = _chunk_bounds(epochs.indices)
    accum = np.zeros(out_len + 2 * int(left.max() + right.max()))
    win_sum = np.zeros_like(accum)
    pad = int(left.max() + right.max())

    last_chunk = 0
    epoch_positions = epochs.indices.astype(np.float64)
    for s in marks:
        u = to_original(s)
        k = int(np.searchsorted(epoch_positions, u))
        if k >= len(epoch_positions):
            k = len(epoch_positions) - 1
        elif k > 0 and u - epoch_positions[k - 1] <= epoch_positions[k] - u:
            k -= 1
        k = max(k, last_chunk)
        last_chunk = k

        e = int(epochs.indices[k])
        p_l, p_r = int(left[k]), int(right[k])
        chunk = np.zeros(p_l + p_r)
        src_lo, src_hi = e - p_l, e + p_r
        clip_lo, clip_hi = max(src_lo, 0), min(src_hi, n)
        if clip_hi > clip_lo:
            chunk[clip_lo - src_lo:clip_hi - src_lo] = x[clip_lo:clip_hi]
        window = np.concatenate([_half_hann(p_l, rising=True),
                                 _half_hann(p_r, rising=False)])
        # Fractional placement: split across adjacent samples to avoid the
        # period jitter that integer rounding would add at non-integer periods.
        base = int(math.floor(s))
        frac = s - base
        windowed = chunk * window
        center = base + pad
        accum[center - p_l:center + p_r] += windowed * (1.0 - frac)
        win_sum[center - p_l:center + p_r] += window * (1.0 - frac)
        if frac > 0:
            accum[center + 1 - p_l:center + 1 + p_r] += windowed * frac
            win_sum[center + 1 - p_l:center + 1 + p_r] += window * frac

    out = accum[pad:pad + out_len] / np.maximum(win_sum[pad:pad + out_len],
                                                _WINDOW_SUM_FLOOR)
    return Waveform(out, fs)


def run_postprocess_hook(w: Waveform, command: list[str] | None,
                         timeout: float = 10.0) -> Waveform:
    """Pipe audio through an external WAV-stdin/WAV-stdout cleanup process."""
    if command is None:
        return w
    try:
        proc = subprocess.run(command, input=wav_to_bytes(w),
                              capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise ExternalTimeoutError(f"postprocess exceeded {timeout}s") from exc
    except OSError as exc:
        raise ExternalProcessError(f"cannot launch postprocess {command}: {exc}") from exc
    if proc.returncode != 0:
        raise ExternalProcessError(
            f"postprocess exited {proc.returncode}: "
            f"{proc.stderr.decode(errors='replace')[:500]}")
    try:
        result = wav_from_bytes(proc.stdout)
    except AudioFormatError as exc:
        raise ExternalSchemaError(f"postprocess emitted invalid WAV: {exc}") from exc
    if result.sample_rate != w.sample_rate:
        raise ExternalSchemaError(
            f"postprocess changed sample rate {w.sample_rate} -> "
            f"{result.sample_rate}")
    if abs(len(result) - len(w)) > 0.01 * len(w):
        raise ExternalSchemaError(
            f"postprocess changed length {len(w)} -> {len(result)} "
            f"(more than 1%)")
    return result
