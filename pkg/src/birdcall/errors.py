"""Exception types shared across the pipeline."""


class SilentSpectrogramError(ValueError):
    """A clip carries no signal energy; callers skip the sample and log it."""


class ManifestError(ValueError):
    """Malformed or inconsistent dataset manifest."""


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or structurally invalid checkpoint file."""


class ConfigMismatchError(RuntimeError):
    """Checkpoint was produced under different pipeline constants than the active config."""
