"""Exception hierarchy.

Pipeline failures carry the name of the stage that raised them so the CLI
can report it and map it onto a stable exit code.
"""


class SynthError(Exception):
    """Base class for all library errors."""


# Expression layer -------------------------------------------------------

class ExprError(SynthError):
    """Problem while parsing or evaluating a right-hand side expression."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ExprSyntaxError(ExprError, ValueError):
    pass


class UnknownVariable(ExprError, NameError):
    def __init__(self, name, offset=None):
        super().__init__(f"unknown variable {name!r}", offset)
        self.name = name


class DivideByZero(ExprError, ZeroDivisionError):
    pass


class DomainError(ExprError, ValueError):
    pass


# Exponential polynomial algebra ----------------------------------------

class AlphaMismatch(SynthError, ValueError):
    pass


class ShapeMismatch(SynthError, ValueError):
    pass


# Pipeline stages -------------------------------------------------------

class StageError(SynthError):
    """A fatal failure tied to one named stage of the synthesis pipeline."""

    default_stage = "unknown"

    def __init__(self, message, stage=None):
        self.stage = stage or self.default_stage
        super().__init__(f"[{self.stage}] {message}")


class NotControllable(StageError):
    default_stage = "kalman_rank"


class NotControllableAtTarget(StageError):
    default_stage = "rank_S1"


class CascadeDiverged(StageError):
    default_stage = "compute_phis"


class RankDeficient(StageError):
    default_stage = "build_S2"


class SingularAtTau(StageError):
    default_stage = "solve_phi_jets"


class DuplicatePoles(StageError):
    default_stage = "place_poles"


class NonPositiveAlpha(StageError):
    default_stage = "validate_alpha"


class StepRejectionLimit(StageError):
    default_stage = "integrate"


class ConfigError(SynthError, ValueError):
    """Malformed or inconsistent run configuration."""


class PoleConditionViolated(UserWarning):
    """Pole set does not respect the strict stability margin (non-fatal)."""
