"""Pipeline configuration, loadable from JSON."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .audio import GAIN_CLAMP, HOP_SECONDS, PIPELINE_RATE

CONFIG_ENV_VAR = "SPEECHEDIT_CONFIG"


@dataclass(frozen=True)
class PipelineConfig:
    sample_rate: int = PIPELINE_RATE
    hop: float = HOP_SECONDS
    crossfade_seconds: float = 0.020
    context_phonemes: int = 10
    gain_clamp: tuple[float, float] = GAIN_CLAMP
    rate_clamp: tuple[float, float] = (0.25, 4.0)
    f0_range: tuple[float, float] = (50.0, 550.0)
    voicing_high: float = 0.6
    voicing_low: float = 0.4
    transition_sigma: float = 0.2
    candidate_count: int = 4
    hook_command: tuple[str, ...] | None = None
    hook_timeout: float = 10.0
    seed: int = 0
    # Optional explicit speaker grid; otherwise fitted from session audio.
    grid_mu: float | None = None
    grid_sigma: float | None = None

    @classmethod
    def from_json(cls, document: str | dict) -> "PipelineConfig":
        doc = json.loads(document) if isinstance(document, str) else dict(document)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("gain_clamp", "rate_clamp", "f0_range"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        if doc.get("hook_command") is not None:
            doc["hook_command"] = tuple(doc["hook_command"])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    @classmethod
    def from_environment(cls) -> "PipelineConfig":
        path = os.environ.get(CONFIG_ENV_VAR)
        if path:
            return cls.from_file(path)
        return cls()
