"""Edit orchestration: text edits -> splice plan -> prosody-corrected audio."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import prosody
from .alignment import SILENCE, AlignedTranscript, PhonemeInterval, WordInterval
from .audio import (
    Waveform,
    a_weighted_rms,
    equal_power_crossfade,
    frame_count_for_duration,
    match_loudness,
)
from .config import PipelineConfig
from .errors import EditScriptError, PipelineError, SpeechEditError
from .pitch import PitchContour, PitchGrid, build_grid, track
from .prosody import (
    ContextProsody,
    ProsodyConstraints,
    ProsodyTargets,
    external_generator,
    generate_targets,
)
from .psola import (
    build_rate_map,
    detect_epochs,
    fit_map_to_frames,
    run_postprocess_hook,
    synthesize,
)

_MIN_ANALYSIS_SECONDS = 0.040


# ---------------------------------------------------------------------------
# Edit scripts


@dataclass(frozen=True)
class EditOp:
    kind: str
    target: tuple[int, int] | None = None
    source_recording: str | None = None
    source: tuple[int, int] | None = None
    at: int | None = None


@dataclass(frozen=True)
class EditScript:
    """Ordered text-level operations; word spans are half-open."""

    ops: tuple[EditOp, ...]

    @classmethod
    def from_json(cls, document: str | dict,
                  default_recording: str | None = None) -> "EditScript":
        doc = json.loads(document) if isinstance(document, str) else document
        ops = []
        for i, raw in enumerate(doc.get("ops", [])):
            kind = raw.get("op")
            if kind not in {"cut", "copy", "paste", "replace"}:
                raise EditScriptError(f"unknown op kind {kind!r}", op_index=i)
            ops.append(EditOp(
                kind=kind,
                target=tuple(raw["target"]) if "target" in raw else None,
                source_recording=raw.get("source_recording", default_recording),
                source=tuple(raw["source"]) if "source" in raw else None,
                at=raw.get("at"),
            ))
        return cls(tuple(ops))

    def to_json_dict(self) -> dict:
        ops = []
        for op in self.ops:
            entry: dict = {"op": op.kind}
            if op.target is not None:
                entry["target"] = list(op.target)
            if op.source_recording is not None:
                entry["source_recording"] = op.source_recording
            if op.source is not None:
                entry["source"] = list(op.source)
            if op.at is not None:
                entry["at"] = op.at
            ops.append(entry)
        return {"ops": ops}


# ---------------------------------------------------------------------------
# Virtual document: phoneme tokens with provenance


@dataclass(frozen=True)
class Token:
    symbol: str
    recording_id: str
    src_index: int
    start: float          # source-relative seconds
    end: float
    word_uid: int | None  # None for silence tokens
    word_text: str | None
    donor: bool = False

    @property
    def duration(self) -> float:
        return self.end - self.start


def _tokens_from_transcript(t: AlignedTranscript, recording_id: str,
                            uid_offset: int = 0) -> list[Token]:
    word_of = {}
    for k, w in enumerate(t.words):
        for i in range(*w.phoneme_range):
            word_of[i] = k
    tokens = []
    for i, p in enumerate(t.phonemes):
        k = word_of.get(i)
        tokens.append(Token(
            p.symbol, recording_id, i, p.start, p.end,
            None if k is None else uid_offset + k,
            None if k is None else t.words[k].text))
    return tokens


class _Doc:
    """Mutable token sequence the edit ops are applied to."""

    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self._next_uid = 1 + max(
            (t.word_uid for t in tokens if t.word_uid is not None), default=-1)

    def words(self) -> list[tuple[int, int, str]]:
        """(first_token, last_token + 1, text) for each word, in order."""
        out = []
        i = 0
        while i < len(self.tokens):
            uid = self.tokens[i].word_uid
            if uid is None:
                i += 1
                continue
            j = i
            while j < len(self.tokens) and self.tokens[j].word_uid == uid:
                j += 1
            out.append((i, j, self.tokens[i].word_text or ""))
            i = j
        return out

    def word_token_span(self, word_span: tuple[int, int]) -> tuple[int, int]:
        """Token range covering the word span plus interior silences."""
        words = self.words()
        lo, hi = word_span
        if not (0 <= lo < hi <= len(words)):
            raise EditScriptError(
                f"word span [{lo}, {hi}) invalid for {len(words)} words")
        return words[lo][0], words[hi - 1][1]

    def insertion_point(self, word_index: int) -> int:
        words = self.words()
        if not (0 <= word_index <= len(words)):
            raise EditScriptError(
                f"insertion index {word_index} invalid for {len(words)} words")
        if word_index < len(words):
            return words[word_index][0]
        return words[-1][1] if words else len(self.tokens)

    def renumber(self, tokens: list[Token]) -> list[Token]:
        """Give pasted tokens fresh word uids, preserving their grouping."""
        mapping: dict[int, int] = {}
        out = []
        for t in tokens:
            if t.word_uid is None:
                out.append(dc_replace(t, donor=True))
                continue
            if t.word_uid not in mapping:
                mapping[t.word_uid] = self._next_uid
                self._next_uid += 1
            out.append(dc_replace(t, word_uid=mapping[t.word_uid], donor=True))
        return out


# ---------------------------------------------------------------------------
# Splice plans


@dataclass(frozen=True)
class PlanSegment:
    recording_id: str
    start: float
    end: float
    token_span: tuple[int, int]
    donor: bool
    gain: float = 1.0

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SplicePlan:
    destination_id: str
    tokens: tuple[Token, ...]
    segments: tuple[PlanSegment, ...]
    crossfade_seconds: float
    donor_span: tuple[int, int]       # token range of pasted material (may be empty)
    correction_span: tuple[int, int]  # donor plus conditioning context

    @property
    def is_trivial(self) -> bool:
        return len(self.segments) <= 1 and self.donor_span[0] == self.donor_span[1]

    @property
    def join_count(self) -> int:
        return max(len(self.segments) - 1, 0)


def _clip_tokens(tokens: list[Token], donor_tokens: bool) -> list[Token]:
    """Drop leading/trailing silence; interior silence travels with the phrase."""
    lo, hi = 0, len(tokens)
    while lo < hi and tokens[lo].word_uid is None:
        lo += 1
    while hi > lo and tokens[hi - 1].word_uid is None:
        hi -= 1
    return tokens[lo:hi]


def plan_edit(script: EditScript, transcripts: dict[str, AlignedTranscript],
              destination: str,
              config: PipelineConfig | None = None) -> SplicePlan:
    """Apply the ops left-to-right and derive the sample-level splice plan."""
    config = config or PipelineConfig()
    if destination not in transcripts:
        raise EditScriptError(f"unknown destination recording {destination!r}")
    doc = _Doc(_tokens_from_transcript(transcripts[destination], destination))
    clipboard: list[Token] | None = None

    for i, op in enumerate(script.ops):
        try:
            if op.kind == "cut":
                lo, hi = doc.word_token_span(op.target)
                del doc.tokens[lo:hi]
            elif op.kind == "copy":
                src_id = op.source_recording or destination
                if src_id not in transcripts:
                    raise EditScriptError(f"unknown recording {src_id!r}")
                src_doc = _Doc(_tokens_from_transcript(transcripts[src_id], src_id))
                lo, hi = src_doc.word_token_span(op.source)
                clipboard = _clip_tokens(src_doc.tokens[lo:hi], donor_tokens=True)
            elif op.kind == "paste":
                if clipboard is None:
                    raise EditScriptError("paste without a preceding copy")
                pos = doc.insertion_point(op.at)
                doc.tokens[pos:pos] = doc.renumber(clipboard)
            elif op.kind == "replace":
                src_id = op.source_recording or destination
                if src_id not in transcripts:
                    raise EditScriptError(f"unknown recording {src_id!r}")
                lo, hi = doc.word_token_span(op.target)
                src_doc = _Doc(_tokens_from_transcript(transcripts[src_id], src_id))
                s_lo, s_hi = src_doc.word_token_span(op.source)
                incoming = _clip_tokens(src_doc.tokens[s_lo:s_hi], donor_tokens=True)
                current = [(t.recording_id, t.src_index) for t in doc.tokens[lo:hi]]
                if current == [(t.recording_id, t.src_index) for t in incoming]:
                    continue  # degenerate no-op: replacing a span with itself
                doc.tokens[lo:hi] = doc.renumber(incoming)
        except EditScriptError as exc:
            if exc.op_index is None:
                raise EditScriptError(str(exc), op_index=i) from exc
            raise

    tokens = doc.tokens
    if not tokens:
        raise EditScriptError("edit deletes the entire recording")

    # Maximal source-contiguous runs become splice segments.
    segments: list[PlanSegment] = []
    run_start = 0
    for k in range(1, len(tokens) + 1):
        if k < len(tokens):
            a, b = tokens[k - 1], tokens[k]
            contiguous = (a.recording_id == b.recording_id
                          and b.src_index == a.src_index + 1
                          and a.donor == b.donor)
            if contiguous:
                continue
        run = tokens[run_start:k]
        segments.append(PlanSegment(
            run[0].recording_id, run[0].start, run[-1].end,
            (run_start, k), donor=run[0].donor))
        run_start = k

    donor_positions = [i for i, t in enumerate(tokens) if t.donor]
    if donor_positions:
        d_lo, d_hi = donor_positions[0], donor_positions[-1] + 1
        if d_hi - d_lo != len(donor_positions):
            raise EditScriptError(
                "script produces multiple disjoint edit regions; "
                "split it into separate edits")
        donor_span = (d_lo, d_hi)
        c_lo = max(d_lo - config.context_phonemes, 0)
        c_hi = min(d_hi + config.context_phonemes, len(tokens))
        correction_span = (c_lo, c_hi)
    else:
        donor_span = (0, 0)
        if len(segments) > 1:
            join = segments[0].token_span[1]
            c_lo = max(join - config.context_phonemes, 0)
            c_hi = min(join + config.context_phonemes, len(tokens))
            correction_span = (c_lo, c_hi)
        else:
            correction_span = (0, 0)

    return SplicePlan(destination, tuple(tokens), tuple(segments),
                      config.crossfade_seconds, donor_span, correction_span)


# ---------------------------------------------------------------------------
# Prosody sources


@dataclass(frozen=True)
class BuiltinGeneration:
    sigma_jitter: float = 0.0
    sigma_accent: float = 0.0
    include_context: bool = True
    rng_seed: int | None = None  # defaults to the pipeline seed


@dataclass(frozen=True)
class ExternalGeneration:
    command: tuple[str, ...]
    timeout: float = 10.0


ProsodySource = BuiltinGeneration | ExternalGeneration | ProsodyTargets | None


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class SegmentProvenance:
    recording_id: str
    source_span: tuple[int, int]  # samples in the source recording
    gain: float
    donor: bool
    synthesized: bool


@dataclass(frozen=True)
class EditResult:
    waveform: Waveform
    transcript: AlignedTranscript
    targets: ProsodyTargets | None
    provenance: tuple[SegmentProvenance, ...]
    stages: tuple[str, ...]
    seed: int
    plan: SplicePlan
    config: PipelineConfig
    constraints: ProsodyConstraints | None
    generation: ProsodySource
    waveforms: dict[str, Waveform] = field(repr=False, default_factory=dict)

    @property
    def synthesized(self) -> bool:
        return any(p.synthesized for p in self.provenance)


# ---------------------------------------------------------------------------
# Execution helpers


def _span_samples(w: Waveform, start: float, end: float) -> tuple[int, int]:
    return (int(round(start * w.sample_rate)), int(round(end * w.sample_rate)))


def warp_contour(contour: PitchContour, src_durations, dst_durations,
                 hop: float) -> PitchContour:
    """Per-phoneme linear time warp of a contour onto new durations."""
    if len(src_durations) != len(dst_durations):
        raise ValueError("duration sequences must align")
    n_dst = frame_count_for_duration(sum(dst_durations), hop)
    n_src = len(contour)
    if n_dst == 0 or n_src == 0:
        return PitchContour(np.zeros(0), np.zeros(0, dtype=bool), hop)
    cum_src = np.concatenate([[0.0], np.cumsum(src_durations)])
    cum_dst = np.concatenate([[0.0], np.cumsum(dst_durations)])
    f0 = np.empty(n_dst)
    voiced = np.empty(n_dst, dtype=bool)
    for k in range(n_dst):
        t = (k + 0.5) * hop
        j = min(max(int(np.searchsorted(cum_dst, t, side="right")) - 1, 0),
                len(dst_durations) - 1)
        alpha = (t - cum_dst[j]) / dst_durations[j] if dst_durations[j] > 0 else 0.0
        tau = cum_src[j] + alpha * src_durations[j]
        src_frame = min(max(int(tau / hop), 0), n_src - 1)
        f0[k] = contour.f0[src_frame]
        voiced[k] = contour.voiced[src_frame]
    return PitchContour(f0, voiced, hop)


def _context_side(plan: SplicePlan, waveforms: dict[str, Waveform],
                  config: PipelineConfig, before: bool) -> ContextProsody:
    """Conditioning prosody from the segment adjacent to the donor run."""
    d_lo, d_hi = plan.donor_span
    donor_seg = next((s for s in plan.segments if s.donor), None)
    if donor_seg is None:
        return ContextProsody()
    seg_index = plan.segments.index(donor_seg)
    neighbor = seg_index - 1 if before else seg_index + 1
    if not (0 <= neighbor < len(plan.segments)):
        return ContextProsody()
    seg = plan.segments[neighbor]
    t_lo, t_hi = seg.token_span
    if before:
        t_lo = max(t_lo, t_hi - config.context_phonemes)
    else:
        t_hi = min(t_hi, t_lo + config.context_phonemes)
    tokens = plan.tokens[t_lo:t_hi]
    if not tokens:
        return ContextProsody()
    w = waveforms[seg.recording_id]
    span = _span_samples(w, tokens[0].start, tokens[-1].end)
    pitch = None
    if (span[1] - span[0]) / w.sample_rate >= _MIN_ANALYSIS_SECONDS:
        pitch = track(w, span, config.transition_sigma,
                      config.voicing_high, config.voicing_low)
    return ContextProsody(tuple(t.symbol for t in tokens),
                          tuple(t.duration for t in tokens), pitch)


def speaker_grid(waveforms: dict[str, Waveform],
                 config: PipelineConfig) -> PitchGrid:
    """Speaker pitch grid from config overrides or from the session audio."""
    if config.grid_mu is not None and config.grid_sigma is not None:
        return PitchGrid(config.grid_mu, config.grid_sigma)
    voiced: list[np.ndarray] = []
    for w in waveforms.values():
        contour = track(w, None, config.transition_sigma,
                        config.voicing_high, config.voicing_low)
        voiced.append(contour.voiced_f0)
    return build_grid(np.concatenate(voiced) if voiced else np.zeros(0))


def _context_rms(plan: SplicePlan, waveforms: dict[str, Waveform],
                 config: PipelineConfig) -> float | None:
    """A-weighted RMS of the destination context audio around the edit."""
    c_lo, c_hi = plan.correction_span
    d_lo, d_hi = plan.donor_span
    chunks = []
    for lo, hi in ((c_lo, d_lo), (d_hi, c_hi)):
        tokens = plan.tokens[lo:hi]
        if not tokens:
            continue
        for t in tokens:
            w = waveforms[t.recording_id]
            s = _span_samples(w, t.start, t.end)
            chunks.append(w.samples[s[0]:s[1]])
    if not chunks:
        return None
    samples = np.concatenate(chunks)
    if len(samples) < int(0.010 * config.sample_rate):
        return None
    rms = a_weighted_rms(Waveform(samples, config.sample_rate))
    return rms if rms > 0 else None


def _build_targets(plan: SplicePlan, source: ProsodySource,
                   constraints: ProsodyConstraints, stats, grid,
                   seed: int) -> ProsodyTargets:
    d_lo, d_hi = plan.donor_span
    region = [t.symbol for t in plan.tokens[d_lo:d_hi]]
    if isinstance(source, ProsodyTargets):
        if len(source.durations) != len(region):
            raise PipelineError(
                "generation", f"explicit targets cover {len(source.durations)} "
                f"phonemes, edit region has {len(region)}")
        return source
    if isinstance(source, ExternalGeneration):
        return external_generator(list(source.command), region, constraints,
                                  source.timeout)
    if isinstance(source, BuiltinGeneration):
        used = constraints
        if not source.include_context:
            used = ProsodyConstraints(constraints.pinned_durations,
                                      constraints.pinned_pitch)
        rng_seed = source.rng_seed if source.rng_seed is not None else seed
        return generate_targets(region, used, stats, grid, rng_seed,
                                source.sigma_jitter, source.sigma_accent)
    raise PipelineError("generation", f"unknown prosody source {source!r}")


def _synthesize_donor(donor_audio: Waveform, plan: SplicePlan,
                      targets: ProsodyTargets, config: PipelineConfig,
                      ) -> tuple[Waveform, PitchContour]:
    d_lo, d_hi = plan.donor_span
    donor_tokens = plan.tokens[d_lo:d_hi]
    donor_durations = [t.duration for t in donor_tokens]
    region = (0, len(donor_audio))
    contour = track(donor_audio, region, config.transition_sigma,
                    config.voicing_high, config.voicing_low)
    epochs = detect_epochs(donor_audio, region, contour)
    frames = math.ceil(len(donor_audio) / int(round(config.hop * config.sample_rate)))
    shift_contour = warp_contour(targets.pitch, list(targets.durations),
                                 donor_durations, config.hop)
    shift = np.where(shift_contour.voiced, shift_contour.f0, np.nan)
    shift = fit_map_to_frames(shift, frames)
    rate = fit_map_to_frames(build_rate_map(donor_durations, targets.durations,
                                            config.hop), frames)
    return synthesize(donor_audio, region, epochs, shift, rate), contour


def _assemble(plan: SplicePlan, segment_audio: list[np.ndarray],
              donor_boundaries: list[int] | None,
              config: PipelineConfig) -> tuple[Waveform, AlignedTranscript]:
    """Crossfade the segments and rebuild the aligned transcript."""
    fs = config.sample_rate
    ov_target = int(round(plan.crossfade_seconds * fs))

    boundaries: list[float] = []  # absolute end position of each token
    out = Waveform(segment_audio[0], fs)
    offsets = [0]
    overlaps = []
    for s in range(1, len(segment_audio)):
        ov = min(ov_target, len(out), len(segment_audio[s]))
        overlaps.append(ov)
        offsets.append(len(out) - ov)
        out = equal_power_crossfade(out, Waveform(segment_audio[s], fs),
                                    ov / fs)
    total = len(out)

    for s, seg in enumerate(plan.segments):
        t_lo, t_hi = seg.token_span
        seg_len = len(segment_audio[s])
        seg_lo = offsets[s] + (math.ceil(overlaps[s - 1] / 2) if s > 0 else 0)
        seg_hi = offsets[s] + seg_len
        if s < len(plan.segments) - 1:
            seg_hi -= overlaps[s] // 2
        if seg.donor and donor_boundaries is not None:
            ends = [offsets[s] + b for b in donor_boundaries[1:]]
        else:
            start_t = plan.tokens[t_lo].start
            ends = [offsets[s] + round((plan.tokens[i].end - start_t) * fs)
                    for i in range(t_lo, t_hi)]
        ends = [min(max(e, seg_lo), seg_hi) for e in ends]
        ends[-1] = seg_hi
        boundaries.extend(ends)

    # Enforce strict monotonicity; crossfade carving can collapse thin tokens.
    mono: list[int] = []
    for e in boundaries:
        e = int(e)
        if mono and e <= mono[-1]:
            e = mono[-1] + 1
        mono.append(e)
    mono[-1] = total
    for i in range(len(mono) - 2, -1, -1):
        if mono[i] >= mono[i + 1]:
            mono[i] = mono[i + 1] - 1

    phonemes = []
    start = 0
    for token, end in zip(plan.tokens, mono):
        phonemes.append(PhonemeInterval(token.symbol, start / fs, end / fs))
        start = end
    words = []
    i = 0
    while i < len(plan.tokens):
        uid = plan.tokens[i].word_uid
        if uid is None:
            i += 1
            continue
        j = i
        while j < len(plan.tokens) and plan.tokens[j].word_uid == uid:
            j += 1
        words.append(WordInterval(plan.tokens[i].word_text or "", (i, j)))
        i = j
    transcript = AlignedTranscript(tuple(words), tuple(phonemes), total / fs)
    return out, transcript


# ---------------------------------------------------------------------------
# Main entry points


def execute(plan: SplicePlan, waveforms: dict[str, Waveform],
            config: PipelineConfig, prosody_source: ProsodySource,
            seed: int, stats=None, grid: PitchGrid | None = None,
            constraints: ProsodyConstraints | None = None,
            base_constraints_only: bool = False) -> EditResult:
    """Run the pipeline stages over a splice plan.

    prosody_source=None performs the splice without prosody correction.
    """
    stages: list[str] = []
    fs = config.sample_rate
    for rid, w in waveforms.items():
        if w.sample_rate != fs:
            raise PipelineError("input", f"recording {rid!r} at {w.sample_rate} Hz; "
                                         f"pipeline expects {fs}")

    d_lo, d_hi = plan.donor_span
    has_donor = d_hi > d_lo
    correct = has_donor and prosody_source is not None

    # (1) loudness-match donor segments to the destination context level
    segment_audio: list[np.ndarray] = []
    gains: list[float] = []
    reference = _context_rms(plan, waveforms, config) if has_donor else None
    for seg in plan.segments:
        w = waveforms[seg.recording_id]
        span = _span_samples(w, seg.start, seg.end)
        audio = w.samples[span[0]:span[1]]
        gain = 1.0
        if seg.donor and reference is not None:
            try:
                matched, gain = match_loudness(Waveform(audio, fs), reference,
                                               config.gain_clamp)
                audio = matched.samples
            except SpeechEditError as exc:
                raise PipelineError("loudness", exc) from exc
        segment_audio.append(np.asarray(audio, dtype=np.float64))
        gains.append(gain)
    if has_donor:
        stages.append("loudness")

    targets = None
    donor_boundaries = None
    used_constraints = constraints
    if correct:
        # (2) conditioning constraints from the unedited context
        try:
            if used_constraints is None:
                used_constraints = ProsodyConstraints(
                    context_before=_context_side(plan, waveforms, config, True),
                    context_after=_context_side(plan, waveforms, config, False))
            stages.append("constraints")
        except SpeechEditError as exc:
            raise PipelineError("constraints", exc) from exc

        if stats is None:
            stats = _stats_from_tokens(plan)
        if grid is None:
            try:
                grid = speaker_grid(waveforms, config)
            except (ValueError, SpeechEditError) as exc:
                raise PipelineError("grid", exc) from exc

        # (3) prosody targets
        try:
            targets = _build_targets(plan, prosody_source, used_constraints,
                                     stats, grid, seed)
            stages.append("generation")
        except PipelineError:
            raise
        except SpeechEditError as exc:
            raise PipelineError("generation", exc) from exc

        # (4)+(5) impose the targets on the donor audio
        donor_index = next(i for i, s in enumerate(plan.segments) if s.donor)
        donor_audio = Waveform(segment_audio[donor_index], fs)
        try:
            synthesized, _ = _synthesize_donor(donor_audio, plan, targets, config)
            stages.append("psola")
        except (ValueError, SpeechEditError) as exc:
            raise PipelineError("psola", exc) from exc

        # (6) optional cleanup hook
        try:
            cleaned = run_postprocess_hook(synthesized, list(config.hook_command)
                                           if config.hook_command else None,
                                           config.hook_timeout)
            if config.hook_command:
                stages.append("postprocess")
        except SpeechEditError as exc:
            raise PipelineError("postprocess", exc) from exc
        segment_audio[donor_index] = cleaned.samples

        cum = np.concatenate([[0.0], np.cumsum(targets.durations)])
        scale = len(cleaned) / (cum[-1] * fs) if cum[-1] > 0 else 1.0
        donor_boundaries = [int(round(c * fs * scale)) for c in cum]
        donor_boundaries[-1] = len(cleaned)
    elif has_donor and prosody_source is None:
        # naive: keep the donor's measured prosody for the result record
        donor_tokens = plan.tokens[d_lo:d_hi]
        durations = tuple(t.duration for t in donor_tokens)
        donor_index = next(i for i, s in enumerate(plan.segments) if s.donor)
        donor_audio = Waveform(segment_audio[donor_index], fs)
        if donor_audio.duration_seconds >= _MIN_ANALYSIS_SECONDS:
            contour = track(donor_audio, None, config.transition_sigma,
                            config.voicing_high, config.voicing_low)
            n = frame_count_for_duration(sum(durations), config.hop)
            targets = ProsodyTargets(durations, PitchContour(
                fit_map_to_frames(contour.f0, n),
                fit_map_to_frames(contour.voiced, n).astype(bool)))

    # (7) splice with equal-power crossfades, (8) rebuild the alignment
    try:
        waveform, transcript = _assemble(plan, segment_audio, donor_boundaries,
                                         config)
        stages.extend(["splice", "alignment"])
    except SpeechEditError as exc:
        raise PipelineError("splice", exc) from exc

    provenance = tuple(
        SegmentProvenance(seg.recording_id,
                          _span_samples(waveforms[seg.recording_id],
                                        seg.start, seg.end),
                          gains[i], seg.donor, seg.donor and correct)
        for i, seg in enumerate(plan.segments))
    return EditResult(waveform, transcript, targets, provenance, tuple(stages),
                      seed, plan, config, used_constraints, prosody_source,
                      dict(waveforms))


def _stats_from_tokens(plan: SplicePlan) -> prosody.DurationStats:
    """Fallback duration statistics from the plan's own phoneme tokens."""
    observed: dict[str, list[float]] = {}
    for t in plan.tokens:
        observed.setdefault(t.symbol, []).append(
            min(t.duration, prosody.MAX_PHONE_SECONDS))
    means = {s: float(np.mean(v)) for s, v in observed.items()}
    stddevs = {s: float(np.std(v)) for s, v in observed.items()}
    counts = {s: len(v) for s, v in observed.items()}
    everything = [d for v in observed.values() for d in v]
    return prosody.DurationStats(means, stddevs, counts, float(np.mean(everything)))


def run_edit(script: EditScript, recordings: dict[str, tuple[Waveform, AlignedTranscript]],
             destination: str, config: PipelineConfig,
             prosody_source: ProsodySource, seed: int,
             grid: PitchGrid | None = None) -> EditResult:
    """Plan and execute an edit against a set of aligned recordings."""
    transcripts = {rid: t for rid, (_, t) in recordings.items()}
    waveforms = {rid: w for rid, (w, _) in recordings.items()}
    plan = plan_edit(script, transcripts, destination, config)
    stats = prosody.fit_duration_stats(list(transcripts.values()))
    return execute(plan, waveforms, config, prosody_source, seed,
                   stats=stats, grid=grid)


def regenerate_with_overrides(prev: EditResult, overrides: ProsodyConstraints,
                              seed: int) -> EditResult:
    """Re-run generation and synthesis with extra pins; context is reused."""
    if prev.constraints is None or prev.generation is None:
        raise PipelineError("regenerate",
                            "previous result has no prosody stage to re-run")
    d_lo, d_hi = prev.plan.donor_span
    region_len = d_hi - d_lo
    for j in overrides.pinned_durations:
        if not (0 <= j < region_len):
            raise ValueError(f"pinned duration index {j} outside the edit "
                             f"region of {region_len} phonemes")
    merged = ProsodyConstraints(
        {**prev.constraints.pinned_durations, **overrides.pinned_durations},
        {**prev.constraints.pinned_pitch, **overrides.pinned_pitch},
        prev.constraints.context_before, prev.constraints.context_after)

    generation = prev.generation
    if isinstance(generation, ProsodyTargets):
        generation = _pin_explicit_targets(generation, merged, prev.config.hop)
    return execute(prev.plan, prev.waveforms, prev.config, generation, seed,
                   constraints=merged)


def _pin_explicit_targets(targets: ProsodyTargets,
                          constraints: ProsodyConstraints,
                          hop: float) -> ProsodyTargets:
    """Apply pins directly onto explicit targets, rewarping pitch as needed."""
    durations = list(targets.durations)
    for j, d in constraints.pinned_durations.items():
        if not (0 <= j < len(durations)):
            raise ValueError(f"pinned duration index {j} out of range")
        durations[j] = d
    pitch = warp_contour(targets.pitch, list(targets.durations), durations, hop)
    f0 = pitch.f0.copy()
    voiced = pitch.voiced.copy()
    for frame, pin in constraints.pinned_pitch.items():
        if not (0 <= frame < len(f0)):
            raise ValueError(f"pinned pitch frame {frame} out of range")
        if pin is None:
            voiced[frame] = False
        else:
            voiced[frame] = True
            f0[frame] = pin
    return ProsodyTargets(tuple(durations), PitchContour(f0, voiced, hop))
