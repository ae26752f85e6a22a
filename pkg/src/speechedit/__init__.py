"""Text-based speech editing with context-aware prosody correction."""

from .audio import Waveform, equal_power_crossfade, load_wav, resample, save_wav
from .alignment import AlignedTranscript, parse_alignment, serialize_alignment
from .pitch import PitchContour, PitchGrid, build_grid, track
from .prosody import ProsodyConstraints, ProsodyTargets, fit_duration_stats
from .config import PipelineConfig

__all__ = [
    "AlignedTranscript",
    "PipelineConfig",
    "PitchContour",
    "PitchGrid",
    "ProsodyConstraints",
    "ProsodyTargets",
    "Waveform",
    "build_grid",
    "equal_power_crossfade",
    "fit_duration_stats",
    "load_wav",
    "parse_alignment",
    "resample",
    "save_wav",
    "serialize_alignment",
    "track",
]

__version__ = "0.1.0"
