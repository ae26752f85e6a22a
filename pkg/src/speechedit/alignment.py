"""Word/phoneme time alignments: parsing, phrase matching, span lookup."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import AlignmentError, UnknownPhonemeError

SILENCE = "sp"

ARPABET = frozenset("""
    AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K L M N NG
    OW OY P R S SH T TH UH UW V W Y Z ZH
""".split())

VALID_SYMBOLS = ARPABET | {SILENCE}

# Voiceless consonants plus silence; everything else counts as voiced.
UNVOICED_SYMBOLS = frozenset({SILENCE, "P", "T", "K", "F", "TH", "S", "SH", "CH", "HH"})

MAX_PHONEME_SECONDS = 2.0
_TIME_EPS = 1e-6


def normalize_symbol(symbol: str) -> str:
    """Strip CMUdict stress digits and validate against the closed set."""
    base = symbol.strip().upper()
    if base and base[-1] in "012":
        base = base[:-1]
    if base == SILENCE.upper() or symbol.strip() == SILENCE:
        return SILENCE
    if base not in ARPABET:
        raise UnknownPhonemeError(f"unknown phoneme symbol {symbol!r}")
    return base


def normalize_word(text: str) -> str:
    """Lowercase and strip punctuation; used for phrase equality."""
    return re.sub(r"[^\w']+", "", text.lower())


@dataclass(frozen=True)
class PhonemeInterval:
    symbol: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def is_silence(self) -> bool:
        return self.symbol == SILENCE


@dataclass(frozen=True)
class WordInterval:
    text: str
    phoneme_range: tuple[int, int]  # half-open index span into the phoneme list

    @property
    def first(self) -> int:
        return self.phoneme_range[0]

    @property
    def last(self) -> int:
        return self.phoneme_range[1] - 1


@dataclass(frozen=True)
class AlignedTranscript:
    words: tuple[WordInterval, ...]
    phonemes: tuple[PhonemeInterval, ...]
    audio_duration: float

    def __post_init__(self):
        _validate(self)

    def word_start(self, i: int) -> float:
        return self.phonemes[self.words[i].first].start

    def word_end(self, i: int) -> float:
        return self.phonemes[self.words[i].last].end

    def word_texts(self) -> list[str]:
        return [w.text for w in self.words]


def _validate(t: AlignedTranscript) -> None:
    for i, p in enumerate(t.phonemes):
        if p.symbol not in VALID_SYMBOLS:
            raise UnknownPhonemeError(f"phoneme {i}: unknown symbol {p.symbol!r}")
        if not (0 <= p.start < p.end):
            raise AlignmentError(f"phoneme {i}: invalid interval [{p.start}, {p.end}]")
        if p.duration > MAX_PHONEME_SECONDS + _TIME_EPS:
            raise AlignmentError(f"phoneme {i}: duration {p.duration:.3f}s exceeds "
                                 f"{MAX_PHONEME_SECONDS}s sanity bound")
    for i in range(len(t.phonemes) - 1):
        if t.phonemes[i].end > t.phonemes[i + 1].start + _TIME_EPS:
            raise AlignmentError(f"phonemes {i} and {i + 1} overlap or are unordered")

    prev_end_idx = 0
    for k, w in enumerate(t.words):
        lo, hi = w.phoneme_range
        if not (0 <= lo < hi <= len(t.phonemes)):
            raise AlignmentError(f"word {k}: phoneme range {w.phoneme_range} invalid")
        if lo < prev_end_idx:
            raise AlignmentError(f"word {k}: phoneme range overlaps previous word")
        for i in range(prev_end_idx, lo):
            if not t.phonemes[i].is_silence:
                raise AlignmentError(
                    f"phoneme {i} between words must be silence, got "
                    f"{t.phonemes[i].symbol!r}")
        for i in range(lo, hi):
            if t.phonemes[i].is_silence:
                raise AlignmentError(f"word {k}: contains silence phoneme {i}")
        for i in range(lo, hi - 1):
            if abs(t.phonemes[i].end - t.phonemes[i + 1].start) > _TIME_EPS:
                raise AlignmentError(
                    f"word {k}: gap between phonemes {i} and {i + 1} is not "
                    f"covered (no implicit time inside words)")
        if k > 0:
            gap_start = t.phonemes[t.words[k - 1].last].end
            gap_end = t.phonemes[lo].start
            cursor = gap_start
            for i in range(t.words[k - 1].phoneme_range[1], lo):
                if abs(t.phonemes[i].start - cursor) > _TIME_EPS:
                    raise AlignmentError(
                        f"gap before word {k} not covered at phoneme {i}")
                cursor = t.phonemes[i].end
            if abs(cursor - gap_end) > _TIME_EPS:
                raise AlignmentError(
                    f"gap between words {k - 1} and {k} has uncovered time "
                    f"({cursor:.3f} != {gap_end:.3f}); silence must be explicit")
        prev_end_idx = hi
    for i in range(prev_end_idx, len(t.phonemes)):
        if not t.phonemes[i].is_silence:
            raise AlignmentError(f"trailing phoneme {i} outside any word must be "
                                 f"silence, got {t.phonemes[i].symbol!r}")
    if t.phonemes and t.phonemes[-1].end > t.audio_duration + _TIME_EPS:
        raise AlignmentError(
            f"last phoneme ends at {t.phonemes[-1].end:.3f}s, beyond the audio "
            f"duration {t.audio_duration:.3f}s")


def parse_alignment(document: str | dict) -> AlignedTranscript:
    """Parse and validate the alignment JSON schema."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise AlignmentError(f"alignment is not valid JSON: {exc}") from exc
    try:
        duration = float(document["audio_duration"])
        raw_words = document["words"]
        raw_phonemes = document["phonemes"]
    except (KeyError, TypeError) as exc:
        raise AlignmentError(f"alignment missing required field: {exc}") from exc

    phonemes = []
    for i, p in enumerate(raw_phonemes):
        try:
            phonemes.append(PhonemeInterval(normalize_symbol(p["symbol"]),
                                            float(p["start"]), float(p["end"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise AlignmentError(f"phoneme {i}: {exc}") from exc

    words = []
    for k, w in enumerate(raw_words):
        try:
            idx = [int(i) for i in w["phonemes"]]
            text = str(w["text"])
        except (KeyError, TypeError, ValueError) as exc:
            raise AlignmentError(f"word {k}: {exc}") from exc
        if not idx:
            raise AlignmentError(f"word {k}: empty phoneme list")
        if idx != list(range(idx[0], idx[-1] + 1)):
            raise AlignmentError(f"word {k}: phoneme indices not contiguous")
        words.append(WordInterval(normalize_word(text), (idx[0], idx[-1] + 1)))

    return AlignedTranscript(tuple(words), tuple(phonemes), duration)


def serialize_alignment(t: AlignedTranscript) -> str:
    doc = {
        "audio_duration": t.audio_duration,
        "words": [{"text": w.text, "phonemes": list(range(*w.phoneme_range))}
                  for w in t.words],
        "phonemes": [{"symbol": p.symbol, "start": p.start, "end": p.end}
                     for p in t.phonemes],
    }
    return json.dumps(doc, indent=2)


@dataclass(frozen=True)
class PhraseMatch:
    """Identical word runs: half-open word spans into each transcript."""
    span_a: tuple[int, int]
    span_b: tuple[int, int]
    words: tuple[str, ...]


def find_repeated_phrases(t1: AlignedTranscript, t2: AlignedTranscript,
                          min_words: int, max_words: int) -> list[PhraseMatch]:
    """All maximal common word runs, windowed down to max_words."""
    if not (1 <= min_words <= max_words):
        raise ValueError("need 1 <= min_words <= max_words")
    w1 = [normalize_word(w.text) for w in t1.words]
    w2 = [normalize_word(w.text) for w in t2.words]
    n, m = len(w1), len(w2)
    # run[i][j] = length of the common run starting at (i, j)
    run = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if w1[i] == w2[j]:
                run[i][j] = run[i + 1][j + 1] + 1
    matches = []
    for i in range(n):
        for j in range(m):
            length = run[i][j]
            if length < min_words:
                continue
            maximal = i == 0 or j == 0 or w1[i - 1] != w2[j - 1]
            if not maximal:
                continue
            if length <= max_words:
                offsets = [0]
                size = length
            else:
                size = max_words
                offsets = range(length - max_words + 1)
            for k in offsets:
                matches.append(PhraseMatch(
                    (i + k, i + k + size), (j + k, j + k + size),
                    tuple(w1[i + k:i + k + size])))
    matches.sort(key=lambda p: (p.span_a, p.span_b))
    return matches


def words_to_time_span(t: AlignedTranscript, word_span: tuple[int, int],
                       include_boundary_silence: bool = False,
                       ) -> tuple[tuple[float, float], tuple[int, int]]:
    """Time span and half-open phoneme index range covered by the word span.

    Interior silences travel with the phrase; boundary silences only when
    flagged.
    """
    lo, hi = word_span
    if not (0 <= lo < hi <= len(t.words)):
        raise ValueError(f"word span [{lo}, {hi}) invalid for {len(t.words)} words")
    first = t.words[lo].first
    last = t.words[hi - 1].last
    if include_boundary_silence:
        while first > 0 and t.phonemes[first - 1].is_silence:
            first -= 1
        while last + 1 < len(t.phonemes) and t.phonemes[last + 1].is_silence:
            last += 1
    span = (t.phonemes[first].start, t.phonemes[last].end)
    return span, (first, last + 1)
