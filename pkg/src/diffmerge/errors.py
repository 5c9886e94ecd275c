"""Exception hierarchy shared by all diffmerge modules.

Every error carries a short machine-parsable ``category`` used by the CLI
to emit one-line diagnostics and pick exit codes.
"""


class DiffmergeError(Exception):
    """Base class for all diffmerge errors."""

    category = "error"


class DimensionError(DiffmergeError):
    """Array shapes are incompatible with the requested operation."""

    category = "dimension"


class ContractError(DiffmergeError):
    """A caller violated an operation precondition."""

    category = "contract"


class AlignmentError(DiffmergeError):
    """Named parameter collections do not line up (names or shapes)."""

    category = "alignment"


class ConfigurationError(DiffmergeError):
    """Invalid configuration value or combination."""

    category = "configuration"


class TimestepError(DiffmergeError, IndexError):
    """Timestep index outside the valid range [0, T)."""

    category = "timestep"


class TrainingFailure(DiffmergeError):
    """Training diverged; ``iteration`` is the step at which it was detected."""

    category = "training-failure"

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class DegeneracyError(DiffmergeError):
    """Inputs are degenerate (zero or parallel vectors) where a basis is required."""

    category = "degeneracy"


class EvaluationError(DiffmergeError):
    """An objective callback failed; the message names the offending point."""

    category = "evaluation"
