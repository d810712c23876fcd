"""Exception hierarchy shared by every module of the package."""


class VarTDError(Exception):
    """Base class for all errors raised by vartd."""

    #: short machine-readable tag used by the CLI error JSON
    kind = "error"


class StructuralError(VarTDError, ValueError):
    kind = "structural"


class ImproperChainError(VarTDError, ValueError):
    """The chain can stay away from the terminal state forever."""

    kind = "properness"

    def __init__(self, message, recurrent_class=()):
        super().__init__(message)
        self.recurrent_class = tuple(recurrent_class)


class OccupancyError(VarTDError, ValueError):
    """Some state has zero expected visits (q(x) = 0)."""

    kind = "occupancy"


class NumericalError(VarTDError, ArithmeticError):
    kind = "numerical"


class RankError(VarTDError, ValueError):
    kind = "rank"


class ConditioningError(NumericalError):
    kind = "conditioning"


class DataDeficiencyError(VarTDError, ValueError):
    """Sampled LSTD matrices are singular or too ill-conditioned to solve."""

    kind = "data_deficiency"

    def __init__(self, message, n_episodes=None, condition_numbers=None):
        super().__init__(message)
        self.n_episodes = n_episodes
        self.condition_numbers = condition_numbers or {}


class TruncationError(VarTDError, RuntimeError):
    kind = "truncation"

    def __init__(self, message, max_steps=None):
        super().__init__(message)
        self.max_steps = max_steps


class DivergenceError(VarTDError, RuntimeError):
    kind = "divergence"


class ScheduleError(VarTDError, ValueError):
    kind = "schedule"


class InfeasibleError(VarTDError, ValueError):
    kind = "infeasible"


class ProjectionError(VarTDError, RuntimeError):
    kind = "projection"


class NonConvergenceError(VarTDError, RuntimeError):
    kind = "non_convergence"

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class StageError(VarTDError, RuntimeError):
    """Wraps an error raised inside a named benchmark stage."""

    kind = "stage"

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
