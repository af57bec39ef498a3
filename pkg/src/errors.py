"""
Error types raised by the PostRisk-SMC library.
"""

from typing import Optional


class PostRiskError(Exception):
    """Base class for all library errors."""


class ConfigError(PostRiskError):
    """An experiment configuration is invalid or inconsistent."""


class FieldError(PostRiskError):
    """Covariance construction, decomposition or conditioning failed."""


class SolverError(PostRiskError):
    """A forward solver failed (singular system, non-convergence, step limit)."""

    def __init__(self, message: str, residual: Optional[float] = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class DegenerateEnsembleError(PostRiskError):
    """All importance weights vanished during posterior tempering."""

    def __init__(self, level: Optional[int] = None, alpha: Optional[float] = None,
                 diagnostics: Optional[list] = None):
        where = "" if level is None else f" at iteration {level} (alpha={alpha:.6g})"
        super().__init__(f"ensemble degenerate{where}: all weights are zero")
        self.level = level
        self.alpha = alpha
        self.diagnostics = diagnostics or []


class ParticleSystemDied(PostRiskError):
    """No particle satisfies the current subset condition."""

    def __init__(self, level: int, threshold: float):
        super().__init__(
            f"particle system died at level {level}: no particle reached threshold {threshold:.6g}"
        )
        self.level = level
        self.threshold = threshold


class ThresholdStallError(PostRiskError):
    """Adaptive thresholds did not reach the target within the level limit."""


class ArtifactError(PostRiskError):
    """A run artifact is missing or does not match the report schema."""


class StageError(PostRiskError):
    """Wraps an error raised inside one stage of a PostRisk run."""

    def __init__(self, stage: str, cause: PostRiskError):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
