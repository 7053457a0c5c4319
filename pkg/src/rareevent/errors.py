"""Exception types shared across the estimation stack."""


class RareEventError(Exception):
    """Base class for all estimation failures."""


class DegenerateWeightsError(RareEventError):
    """All importance weights vanished; no resampling target exists."""


class FailedTemperingError(RareEventError):
    """No admissible smoothing bandwidth produced usable weights."""


class NonconvergenceError(RareEventError):
    """An adaptive loop hit its iteration cap before finishing."""


class ModelEvaluationError(RareEventError):
    """A limit-state evaluation failed (e.g. nonpositive coefficient field)."""


class StagnationError(RareEventError):
    """Particle tracking stalled at a zero-velocity point."""
