"""Context-aware duration and pitch generation with user-pinned constraints."""
from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .alignment import UNVOICED_SYMBOLS, AlignedTranscript
from .audio import HOP_SECONDS, frame_count_for_duration
from .errors import (
    ConstraintViolationError,
    ExternalProcessError,
    ExternalSchemaError,
    ExternalTimeoutError,
)
from .pitch import F0_MAX, F0_MIN, PitchContour, PitchGrid, snap_to_grid

MAX_PHONE_SECONDS = 0.5   # durations are capped here to prevent runaway silences
MIN_PHONE_SECONDS = 0.01

TEMPO_CLAMP = (0.5, 2.0)

CANDIDATE_SIGMA_DURATION = 0.1
CANDIDATE_SIGMA_ACCENT = 0.15

_SMOOTH_FRAMES = 5


@dataclass(frozen=True)
class DurationStats:
    """Per-symbol duration statistics fitted on an aligned corpus."""

    means: dict[str, float]
    stddevs: dict[str, float]
    counts: dict[str, int]
    global_mean: float

    def mean(self, symbol: str) -> float:
        return self.means.get(symbol, self.global_mean)

    def to_json(self) -> str:
        doc = {s: {"mean": self.means[s], "stddev": self.stddevs[s],
                   "count": self.counts[s]} for s in sorted(self.means)}
        return json.dumps({"symbols": doc, "global_mean": self.global_mean})

    @classmethod
    def from_json(cls, document: str | dict) -> "DurationStats":
        doc = json.loads(document) if isinstance(document, str) else document
        symbols = doc["symbols"]
        return cls({s: v["mean"] for s, v in symbols.items()},
                   {s: v["stddev"] for s, v in symbols.items()},
                   {s: int(v["count"]) for s, v in symbols.items()},
                   float(doc["global_mean"]))


@dataclass(frozen=True)
class ContextProsody:
    """Known prosody of unedited speech adjacent to the edit region."""

    symbols: tuple[str, ...] = ()
    durations: tuple[float, ...] = ()
    pitch: PitchContour | None = None

    def __post_init__(self):
        if len(self.symbols) != len(self.durations):
            raise ValueError("context symbols and durations must align")


@dataclass(frozen=True)
class ProsodyConstraints:
    """User pins plus surrounding context; unpinned values get generated."""

    pinned_durations: dict[int, float] = field(default_factory=dict)
    pinned_pitch: dict[int, float | None] = field(default_factory=dict)
    context_before: ContextProsody = field(default_factory=ContextProsody)
    context_after: ContextProsody = field(default_factory=ContextProsody)

    def __post_init__(self):
        for i, d in self.pinned_durations.items():
            if not (0 < d <= MAX_PHONE_SECONDS):
                raise ValueError(f"pinned duration at {i} must be in "
                                 f"(0, {MAX_PHONE_SECONDS}], got {d}")
        for i, f in self.pinned_pitch.items():
            if f is not None and not (F0_MIN <= f <= F0_MAX):
                raise ValueError(f"pinned pitch at frame {i} outside "
                                 f"[{F0_MIN}, {F0_MAX}] Hz: {f}")

    def to_json_dict(self) -> dict:
        return {
            "pinned_durations": {str(i): d for i, d in
                                 sorted(self.pinned_durations.items())},
            "pinned_pitch": {str(i): f for i, f in sorted(self.pinned_pitch.items())},
        }

    @classmethod
    def from_json_dict(cls, doc: dict,
                       context_before: ContextProsody = ContextProsody(),
                       context_after: ContextProsody = ContextProsody(),
                       ) -> "ProsodyConstraints":
        return cls(
            {int(i): float(d) for i, d in doc.get("pinned_durations", {}).items()},
            {int(i): (None if f is None else float(f))
             for i, f in doc.get("pinned_pitch", {}).items()},
            context_before, context_after)


@dataclass(frozen=True)
class ProsodyTargets:
    """Generated per-phoneme durations and per-frame pitch for an edit region."""

    durations: tuple[float, ...]
    pitch: PitchContour

    def __post_init__(self):
        for j, d in enumerate(self.durations):
            if not (0 < d <= MAX_PHONE_SECONDS + 1e-9):
                raise ValueError(f"duration {j} out of (0, {MAX_PHONE_SECONDS}]: {d}")
        expected = frame_count_for_duration(sum(self.durations))
        if len(self.pitch) != expected:
            raise ValueError(f"pitch has {len(self.pitch)} frames, expected "
                             f"{expected} = round(sum durations / hop)")

    @property
    def total_seconds(self) -> float:
        return sum(self.durations)

    def to_json_dict(self) -> dict:
        f0 = [None if not v else float(f)
              for f, v in zip(self.pitch.f0, self.pitch.voiced)]
        return {"durations": list(self.durations), "f0": f0,
                "voiced": [bool(v) for v in self.pitch.voiced]}


def fit_duration_stats(corpus: list[AlignedTranscript]) -> DurationStats:
    """Per-symbol mean/stddev of observed durations, long outliers capped."""
    if not corpus:
        raise ValueError("cannot fit duration statistics on an empty corpus")
    observed: dict[str, list[float]] = {}
    for t in corpus:
        for p in t.phonemes:
            observed.setdefault(p.symbol, []).append(
                min(p.duration, MAX_PHONE_SECONDS))
    means, stddevs, counts = {}, {}, {}
    everything = []
    for symbol, values in observed.items():
        arr = np.asarray(values)
        means[symbol] = float(arr.mean())
        stddevs[symbol] = float(arr.std())
        counts[symbol] = len(values)
        everything.extend(values)
    return DurationStats(means, stddevs, counts,
                         float(np.mean(everything)))


def tempo_factor(constraints: ProsodyConstraints, stats: DurationStats) -> float:
    """Context tempo: observed context time over the stats-expected time."""
    symbols = constraints.context_before.symbols + constraints.context_after.symbols
    durations = (constraints.context_before.durations
                 + constraints.context_after.durations)
    if not symbols:
        return 1.0
    expected = sum(stats.mean(s) for s in symbols)
    if expected <= 0:
        return 1.0
    observed = sum(durations)
    return min(max(observed / expected, TEMPO_CLAMP[0]), TEMPO_CLAMP[1])


def generate_durations(region: list[str], constraints: ProsodyConstraints,
                       stats: DurationStats, rng_seed: int,
                       sigma_jitter: float = 0.0) -> tuple[float, ...]:
    """Tempo-scaled statistical durations; pinned entries pass through exactly."""
    if not region:
        raise ValueError("empty phoneme region")
    has_context = bool(constraints.context_before.symbols
                       or constraints.context_after.symbols)
    if not stats.means and not has_context:
        raise ValueError("no duration statistics and no context to generate from")
    rate = tempo_factor(constraints, stats)
    rng = np.random.default_rng(rng_seed)
    out = []
    for j, symbol in enumerate(region):
        if j in constraints.pinned_durations:
            out.append(constraints.pinned_durations[j])
            continue
        value = rate * stats.mean(symbol)
        if sigma_jitter > 0:
            value *= math.exp(sigma_jitter * rng.standard_normal())
        out.append(min(max(value, MIN_PHONE_SECONDS), MAX_PHONE_SECONDS))
    return tuple(out)


def _frame_phonemes(durations, n_frames: int) -> np.ndarray:
    """Phoneme index owning each frame, by the frame's center time."""
    boundaries = np.concatenate([[0.0], np.cumsum(durations)])
    centers = (np.arange(n_frames) + 0.5) * HOP_SECONDS
    idx = np.searchsorted(boundaries, centers, side="right") - 1
    return np.clip(idx, 0, len(durations) - 1)


def _anchor(side: ContextProsody, grid: PitchGrid, take_last: bool) -> float:
    """log2 pitch anchor from a context side, speaker mean as fallback."""
    if side.pitch is not None and side.pitch.voiced.any():
        values = side.pitch.voiced_f0
        return math.log2(values[-1] if take_last else values[0])
    return grid.mu


def generate_pitch(region: list[str], durations, constraints: ProsodyConstraints,
                   grid: PitchGrid, rng_seed: int,
                   sigma_accent: float = 0.0) -> PitchContour:
    """Log2-linear interpolation between context anchors plus smoothed accents.

    Voicing follows the phoneme class; output values live on the speaker grid;
    pinned frames pass through exactly (grid-snapped, or forced unvoiced).
    """
    if len(region) != len(durations):
        raise ValueError("region symbols and durations must align")
    n_frames = frame_count_for_duration(sum(durations))
    owner = _frame_phonemes(durations, n_frames)
    voiced = np.array([region[j] not in UNVOICED_SYMBOLS for j in owner])

    start = _anchor(constraints.context_before, grid, take_last=True)
    stop = _anchor(constraints.context_after, grid, take_last=False)
    # Anchors sit just outside the region: frame k interpolates at (k+1)/(F+1).
    positions = (np.arange(n_frames) + 1.0) / (n_frames + 1.0)
    log_f0 = start + positions * (stop - start)

    if sigma_accent > 0:
        rng = np.random.default_rng(rng_seed)
        accents = sigma_accent * rng.standard_normal(len(region))
        track = accents[owner]
        kernel = np.ones(_SMOOTH_FRAMES) / _SMOOTH_FRAMES
        padded = np.pad(track, _SMOOTH_FRAMES // 2, mode="edge")
        log_f0 = log_f0 + np.convolve(padded, kernel, mode="valid")

    f0 = np.array([snap_to_grid(2.0 ** v, grid) for v in log_f0])
    for frame, pin in constraints.pinned_pitch.items():
        if not (0 <= frame < n_frames):
            raise ValueError(f"pinned pitch frame {frame} outside region of "
                             f"{n_frames} frames")
        if pin is None:
            voiced[frame] = False
        else:
            voiced[frame] = True
            f0[frame] = snap_to_grid(pin, grid)
    return PitchContour(f0, voiced)


def generate_targets(region: list[str], constraints: ProsodyConstraints,
                     stats: DurationStats, grid: PitchGrid, rng_seed: int,
                     sigma_jitter: float = 0.0,
                     sigma_accent: float = 0.0) -> ProsodyTargets:
    durations = generate_durations(region, constraints, stats, rng_seed, sigma_jitter)
    pitch = generate_pitch(region, durations, constraints, grid, rng_seed,
                           sigma_accent)
    return ProsodyTargets(durations, pitch)


def sample_candidates(region: list[str], constraints: ProsodyConstraints,
                      stats: DurationStats, grid: PitchGrid, n: int,
                      seed: int) -> list[ProsodyTargets]:
    """Candidate 0 is deterministic; the rest jitter with per-candidate seeds."""
    if n < 1:
        raise ValueError("need at least one candidate")
    candidates = [generate_targets(region, constraints, stats, grid, seed)]
    for i in range(1, n):
        candidates.append(generate_targets(
            region, constraints, stats, grid, seed + i,
            sigma_jitter=CANDIDATE_SIGMA_DURATION,
            sigma_accent=CANDIDATE_SIGMA_ACCENT))
    return candidates


def _context_to_json(side: ContextProsody) -> dict:
    doc = {"symbols": list(side.symbols), "durations": list(side.durations)}
    if side.pitch is not None:
        doc["f0"] = [None if not v else float(f)
                     for f, v in zip(side.pitch.f0, side.pitch.voiced)]
    return doc


def external_generator(command: list[str], region: list[str],
                       constraints: ProsodyConstraints,
                       timeout: float = 10.0) -> ProsodyTargets:
    """Run an external prosody generator and validate its output.

    Request JSON on stdin, response JSON on stdout; nonzero exit is failure.
    """
    request = json.dumps({
        "phonemes": list(region),
        "constraints": constraints.to_json_dict(),
        "context": {"before": _context_to_json(constraints.context_before),
                    "after": _context_to_json(constraints.context_after)},
        "hop": HOP_SECONDS,
    })
    try:
        proc = subprocess.run(command, input=request.encode(),
                              capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        raise ExternalTimeoutError(
            f"generator exceeded {timeout}s: {command}") from exc
    except OSError as exc:
        raise ExternalProcessError(f"cannot launch generator {command}: {exc}") from exc
    if proc.returncode != 0:
        raise ExternalProcessError(
            f"generator exited {proc.returncode}: {proc.stderr.decode(errors='replace')[:500]}")
    try:
        doc = json.loads(proc.stdout.decode())
        durations = [float(d) for d in doc["durations"]]
        raw_f0 = doc["f0"]
        voiced = [bool(v) for v in doc["voiced"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ExternalSchemaError(f"generator response malformed: {exc}") from exc
    if len(raw_f0) != len(voiced):
        raise ExternalSchemaError("f0 and voiced lengths differ")
    if len(durations) != len(region):
        raise ConstraintViolationError(
            f"generator returned {len(durations)} durations for "
            f"{len(region)} phonemes")
    for j, d in enumerate(durations):
        if not (0 < d <= MAX_PHONE_SECONDS):
            raise ConstraintViolationError(
                f"duration {j} = {d}s outside (0, {MAX_PHONE_SECONDS}]")
    expected_frames = frame_count_for_duration(sum(durations))
    if len(raw_f0) != expected_frames:
        raise ConstraintViolationError(
            f"{len(raw_f0)} pitch frames but durations imply {expected_frames}")
    f0 = np.array([np.nan if f is None else float(f) for f in raw_f0])
    voiced_arr = np.array(voiced, dtype=bool)
    for k in np.nonzero(voiced_arr)[0]:
        if not np.isfinite(f0[k]) or not (F0_MIN <= f0[k] <= F0_MAX):
            raise ConstraintViolationError(
                f"voiced frame {int(k)} pitch {f0[k]} outside "
                f"[{F0_MIN}, {F0_MAX}] Hz")
    for j, pin in constraints.pinned_durations.items():
        if j >= len(durations) or durations[j] != pin:
            raise ConstraintViolationError(
                f"pinned duration at phoneme {j} ignored "
                f"(want {pin}, got {durations[j] if j < len(durations) else None})")
    for frame, pin in constraints.pinned_pitch.items():
        if frame >= len(voiced_arr):
            raise ConstraintViolationError(f"pinned pitch frame {frame} missing")
        if pin is None:
            if voiced_arr[frame]:
                raise ConstraintViolationError(
                    f"frame {frame} pinned unvoiced but returned voiced")
        elif not voiced_arr[frame] or f0[frame] != pin:
            raise ConstraintViolationError(
                f"pinned pitch at frame {frame} ignored "
                f"(want {pin}, got {f0[frame]})")
    return ProsodyTargets(tuple(durations), PitchContour(f0, voiced_arr))
