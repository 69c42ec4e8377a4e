"""Exception types raised across the package."""


class PoseDiffError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PoseDiffError, ValueError):
    """An argument is malformed, out of range, or has the wrong shape."""


class DomainError(PoseDiffError, ValueError):
    """A Lie-group operation was called outside its valid domain.

    ``index`` identifies the offending element in batched calls, when known.
    """

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)
        self.index = index


class DegenerateInputError(PoseDiffError, ValueError):
    """Geometry is too degenerate for a closed-form solve (rank loss, collinear points)."""


class GraphError(PoseDiffError):
    """A pose graph is disconnected or otherwise unusable."""


class GenerationError(PoseDiffError):
    """Synthetic scene generation could not satisfy its constraints."""


class NumericalError(PoseDiffError):
    """An iterative routine failed to converge."""

    def __init__(self, message, residual=None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class SurrogateError(PoseDiffError):
    """A surrogate registration call failed inside the denoising loop."""

    def __init__(self, message, step=None, scan=None):
        where = []
        if step is not None:
            where.append(f"step {step}")
        if scan is not None:
            where.append(f"scan {scan}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)
        self.step = step
        self.scan = scan
