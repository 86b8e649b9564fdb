"""Exception types shared across the toolkit."""


class SparselabError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SparselabError):
    """Invalid configuration, bad paths, or malformed experiment setup."""


class SequenceTooLongError(SparselabError):
    """Token sequence exceeds the model context window."""


class GenerationBudgetError(SparselabError):
    """Prompt length plus generation budget exceeds the context window."""


class CorpusTooSmallError(SparselabError):
    """Training corpus shorter than the required minimum."""


class NonFiniteLossError(SparselabError):
    """Training loss became NaN or infinite."""


class CheckpointError(SparselabError):
    """Malformed, truncated, or inconsistent checkpoint container."""


class SparsityRangeError(SparselabError):
    """Sparsity fraction outside [0, 1)."""


class MissingStatsError(SparselabError):
    """Calibration statistics absent for a prunable matrix."""


class NotPositiveDefiniteError(SparselabError):
    """Damped Gram matrix is not positive definite; try a larger damp_ratio."""


class ShapeMismatchError(SparselabError):
    """Mask or statistics shape disagrees with the weight matrix."""


class DataFormatError(SparselabError):
    """Malformed dataset record; message carries the offending line number."""


class JudgeError(SparselabError):
    """Base class for judge-client failures."""


class JudgeTransportError(JudgeError):
    """HTTP transport failed after all retries."""


class JudgeAuthError(JudgeError):
    """Endpoint rejected the API key."""


class JudgeParseError(JudgeError):
    """Judge reply could not be parsed after all retries."""
