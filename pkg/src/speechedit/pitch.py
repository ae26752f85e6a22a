"""Pitch analysis: candidate posteriors, Viterbi decoding, voicing, speaker grid."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .audio import HOP_SECONDS, FrameGrid, Waveform

F0_MIN = 50.0
F0_MAX = 550.0

# Analysis window: two periods of the lowest trackable frequency.
_WINDOW_SECONDS = 0.040

DEFAULT_TRANSITION_SIGMA = 0.2  # octaves per frame
DEFAULT_VOICING_HIGH = 0.6
DEFAULT_VOICING_LOW = 0.4

GRID_BINS = 128


@dataclass(frozen=True)
class PitchPosteriorgram:
    """Per-frame categorical scores over pitch candidates, rows sum to 1."""

    scores: np.ndarray          # (frames, candidates)
    candidate_frequencies: np.ndarray
    confidence: np.ndarray      # per-frame peak score before normalization
    hop: float = HOP_SECONDS

    @property
    def frame_count(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class PitchContour:
    """Per-10 ms-frame f0; f0 is NaN exactly where voiced is False."""

    f0: np.ndarray
    voiced: np.ndarray
    hop: float = HOP_SECONDS

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64)
        voiced = np.asarray(self.voiced, dtype=bool)
        if f0.shape != voiced.shape:
            raise ValueError("f0 and voiced must have equal length")
        f0 = f0.copy()
        f0[~voiced] = np.nan
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "voiced", voiced)

    def __len__(self) -> int:
        return len(self.f0)

    @property
    def voiced_f0(self) -> np.ndarray:
        return self.f0[self.voiced]

    def to_json(self) -> str:
        f0_list = [None if not v else float(f) for f, v in zip(self.f0, self.voiced)]
        return json.dumps({"hop": self.hop, "f0": f0_list,
                           "voiced": [bool(v) for v in self.voiced]})

    @classmethod
    def from_json(cls, document: str | dict) -> "PitchContour":
        doc = json.loads(document) if isinstance(document, str) else document
        voiced = np.array(doc["voiced"], dtype=bool)
        f0 = np.array([np.nan if f is None else float(f) for f in doc["f0"]])
        return cls(f0, voiced, float(doc.get("hop", HOP_SECONDS)))


def compute_posteriors(w: Waveform, region: tuple[int, int],
                       fmin: float = F0_MIN, fmax: float = F0_MAX,
                       ) -> PitchPosteriorgram:
    """Normalized-autocorrelation pitch candidates per 10 ms frame.

    Candidates are integer lags covering [fmin, fmax]; scores are the positive
    part of the normalized autocorrelation, renormalized per frame. Confidence
    is the raw peak before normalization.
    """
    fs = w.sample_rate
    start, stop = region
    if not (0 <= start < stop <= len(w)):
        raise ValueError(f"region [{start}, {stop}) outside waveform")
    if (stop - start) / fs < _WINDOW_SECONDS:
        raise ValueError(f"region shorter than {_WINDOW_SECONDS * 1000:.0f} ms")

    hop = int(round(HOP_SECONDS * fs))
    window = int(round(_WINDOW_SECONDS * fs))
    grid = FrameGrid.for_region(stop - start, origin_sample=start, sample_rate=fs)

    lag_min = int(round(fs / fmax))
    lag_max = int(round(fs / fmin))
    lags = np.arange(lag_min, lag_max + 1)
    freqs = fs / lags[::-1].astype(np.float64)  # increasing order

    # Analysis windows centered on each frame, zero-padded at waveform edges.
    frames = np.zeros((grid.frame_count, window))
    half = window // 2
    for i in range(grid.frame_count):
        center = start + i * hop + hop // 2
        lo, hi = center - half, center + half
        src_lo, src_hi = max(lo, 0), min(hi, len(w))
        if src_hi > src_lo:
            frames[i, src_lo - lo:src_hi - lo] = w.samples[src_lo:src_hi]

    n_fft = 1 << int(np.ceil(np.log2(window + lag_max + 1)))
    spectra = np.fft.rfft(frames, n=n_fft, axis=1)
    acf = np.fft.irfft(spectra * np.conj(spectra), n=n_fft, axis=1)[:, :lag_max + 1]

    # Energy terms of the two lag-shifted windows, via cumulative sums.
    sq = frames ** 2
    csum = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(sq, axis=1)], axis=1)
    total = csum[:, window]
    lag_idx = lags[np.newaxis, :]
    e_head = np.take_along_axis(csum, window - lag_idx, axis=1)
    e_tail = total[:, None] - np.take_along_axis(csum, lag_idx, axis=1)

    denom = np.sqrt(e_head * e_tail)
    with np.errstate(divide="ignore", invalid="ignore"):
        norm_acf = np.where(denom > 0, acf[:, lag_min:lag_max + 1] / denom, 0.0)
    norm_acf = np.clip(norm_acf[:, ::-1], 0.0, 1.0)  # reorder to match freqs

    confidence = norm_acf.max(axis=1)
    row_sums = norm_acf.sum(axis=1, keepdims=True)
    uniform = np.full_like(norm_acf, 1.0 / norm_acf.shape[1])
    scores = np.where(row_sums > 0, norm_acf / np.where(row_sums > 0, row_sums, 1.0),
                      uniform)
    return PitchPosteriorgram(scores, freqs, confidence)


def viterbi_decode(p: PitchPosteriorgram,
                   transition_sigma_octaves: float = DEFAULT_TRANSITION_SIGMA,
                   ) -> np.ndarray:
    """Most-likely candidate path under Gaussian log2-distance transitions.

    Maximizes sum(log observation) + sum(log transition); ties resolve to the
    lowest candidate index.
    """
    scores = np.asarray(p.scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise ValueError("posteriorgram must have at least one frame")
    log_obs = np.log(scores + 1e-12)
    n_frames, n_cands = scores.shape
    if n_frames == 1:
        return np.array([int(np.argmax(scores[0]))])

    log_f = np.log2(p.candidate_frequencies)
    delta = log_f[:, None] - log_f[None, :]
    if math.isinf(transition_sigma_octaves):
        trans = np.zeros_like(delta)
    else:
        trans = -(delta ** 2) / (2.0 * transition_sigma_octaves ** 2)
    # Normalize per source candidate so transitions are proper distributions.
    trans = trans - np.log(np.exp(trans).sum(axis=1, keepdims=True))

    score = log_obs[0].copy()
    backptr = np.zeros((n_frames, n_cands), dtype=np.int64)
    for t in range(1, n_frames):
        candidate = score[:, None] + trans
        backptr[t] = np.argmax(candidate, axis=0)
        score = candidate[backptr[t], np.arange(n_cands)] + log_obs[t]
    path = np.zeros(n_frames, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = backptr[t, path[t]]
    return path


def hysteresis_voicing(confidence, high: float = DEFAULT_VOICING_HIGH,
                       low: float = DEFAULT_VOICING_LOW) -> np.ndarray:
    """Two-threshold voicing: on at >= high, off below low, starts unvoiced."""
    if not (0 <= low <= high <= 1):
        raise ValueError("need 0 <= low <= high <= 1")
    voiced = np.zeros(len(confidence), dtype=bool)
    state = False
    for i, c in enumerate(confidence):
        if state:
            state = c >= low
        else:
            state = c >= high
        voiced[i] = state
    return voiced


def track(w: Waveform, region: tuple[int, int] | None = None,
          transition_sigma: float = DEFAULT_TRANSITION_SIGMA,
          voicing_high: float = DEFAULT_VOICING_HIGH,
          voicing_low: float = DEFAULT_VOICING_LOW) -> PitchContour:
    """Full tracker: posteriors -> Viterbi -> hysteresis voicing."""
    if region is None:
        region = (0, len(w))
    posteriors = compute_posteriors(w, region)
    path = viterbi_decode(posteriors, transition_sigma)
    f0 = posteriors.candidate_frequencies[path]
    voiced = hysteresis_voicing(posteriors.confidence, voicing_high, voicing_low)
    return PitchContour(f0, voiced)


@dataclass(frozen=True)
class PitchGrid:
    """128 log2-spaced bins spanning +-4 sigma around the speaker mean."""

    mu: float     # mean of log2(f0) over voiced frames
    sigma: float  # stddev of log2(f0)
    bin_count: int = GRID_BINS

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive (degenerate pitch grid)")

    @property
    def log2_min(self) -> float:
        return self.mu - 4.0 * self.sigma

    @property
    def step(self) -> float:
        return 8.0 * self.sigma / (self.bin_count - 1)

    def bin_frequency(self, index: int) -> float:
        return 2.0 ** (self.log2_min + index * self.step)

    @property
    def frequencies(self) -> np.ndarray:
        return 2.0 ** (self.log2_min + np.arange(self.bin_count) * self.step)

    @property
    def mean_frequency(self) -> float:
        return 2.0 ** self.mu


def build_grid(voiced_f0, min_frames: int = 100) -> PitchGrid:
    """Speaker grid from voiced f0 samples; population statistics in log2 space."""
    f0 = np.asarray(voiced_f0, dtype=np.float64)
    f0 = f0[np.isfinite(f0)]
    if len(f0) < min_frames:
        raise ValueError(f"need at least {min_frames} voiced frames, got {len(f0)}")
    logs = np.log2(f0)
    mu = float(logs.mean())
    sigma = float(logs.std())  # population stddev
    if sigma <= 0:
        raise ValueError("constant-pitch corpus yields a degenerate grid")
    return PitchGrid(mu, sigma)


def quantize(f0: float, grid: PitchGrid) -> int:
    """Nearest grid bin in log2 space; out-of-range clamps; ties round up."""
    log_f = math.log2(f0)
    position = (log_f - grid.log2_min) / grid.step
    index = math.floor(position + 0.5)  # round half up
    return min(max(index, 0), grid.bin_count - 1)


def dequantize(index: int, grid: PitchGrid) -> float:
    if not (0 <= index < grid.bin_count):
        raise ValueError(f"bin index {index} outside [0, {grid.bin_count})")
    return grid.bin_frequency(index)


def snap_to_grid(f0: float, grid: PitchGrid) -> float:
    return dequantize(quantize(f0, grid), grid)
