"""Exception hierarchy shared across the toolkit."""


class SpeechEditError(Exception):
    """Base class for all toolkit errors."""


class AudioFormatError(SpeechEditError):
    """Malformed or unreadable audio container."""


class UnsupportedEncodingError(AudioFormatError):
    """Valid container but an encoding we do not read (e.g. 8-bit PCM)."""


class LoudnessError(SpeechEditError):
    """Loudness measurement or matching is impossible (e.g. silent segment)."""


class AlignmentError(SpeechEditError):
    """Alignment document violates the transcript invariants."""


class UnknownPhonemeError(AlignmentError):
    """Phoneme symbol outside the closed ARPAbet-plus-silence set."""


class EditScriptError(SpeechEditError):
    """Invalid edit script (bad span, dangling paste, ...)."""

    def __init__(self, message, op_index=None):
        if op_index is not None:
            message = f"op {op_index}: {message}"
        super().__init__(message)
        self.op_index = op_index


class PipelineError(SpeechEditError):
    """Component failure annotated with the pipeline stage it occurred in."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class ExternalToolError(SpeechEditError):
    """Base for failures of external child processes (generators, hooks)."""


class ExternalProcessError(ExternalToolError):
    """Child process failed to launch or exited nonzero."""


class ExternalTimeoutError(ExternalToolError):
    """Child process exceeded its time budget."""


class ExternalSchemaError(ExternalToolError):
    """Child process output does not parse against the wire schema."""


class ConstraintViolationError(ExternalToolError):
    """Returned prosody targets break an invariant or ignore a pinned value."""
