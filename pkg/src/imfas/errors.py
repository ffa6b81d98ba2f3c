"""Exception hierarchy.

User/config problems derive from :class:`ImfasError`; numeric failures derive
from :class:`NumericError`. The CLI maps the former to exit code 2 and the
latter to exit code 3.
"""


class ImfasError(Exception):
    """Base class for all errors raised by this package."""


class InputShapeError(ImfasError, ValueError):
    pass


class CacheError(ImfasError, ValueError):
    """A backward pass received a cache that does not belong to its forward."""


class SpecError(ImfasError, ValueError):
    pass


class ConfigError(ImfasError, ValueError):
    pass


class ValidationError(ImfasError, ValueError):
    pass


class IncompleteGridError(ValidationError):
    def __init__(self, dataset_id, algorithm_id, fidelity_index):
        self.cell = (dataset_id, algorithm_id, fidelity_index)
        super().__init__(
            f"incomplete grid: missing (dataset_id={dataset_id!r}, "
            f"algorithm_id={algorithm_id!r}, fidelity_index={fidelity_index})"
        )


class SplitError(ImfasError, ValueError):
    pass


class ReportError(ImfasError, ValueError):
    pass


class InsufficientFidelityError(ImfasError, ValueError):
    pass


class NumericError(ImfasError, ArithmeticError):
    pass


class DegeneratePredictionError(NumericError):
    """Predicted ranks have (numerically) zero variance."""


class UndefinedCorrelationError(NumericError):
    """Rank correlation is undefined because one side is constant."""


class TrainingAbortedError(NumericError):
    def __init__(self, epoch, batch, dataset_ids, detail="non-finite loss"):
        self.epoch = epoch
        self.batch = batch
        self.dataset_ids = list(dataset_ids)
        super().__init__(
            f"training aborted at epoch {epoch}, batch {batch}: {detail} "
            f"(datasets: {', '.join(map(str, self.dataset_ids))})"
        )
