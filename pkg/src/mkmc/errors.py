"""Exception types shared across the package."""


class MKMCError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MKMCError, ValueError):
    def __init__(self, expected, actual, what="matrix"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} dimension mismatch: expected {expected}, got {actual}")


class NotPositiveDefinite(MKMCError, ValueError):
    """Cholesky factorization failed, even after the jitter budget was spent.

    ``pivot`` is the zero-based index of the leading minor that failed.
    """

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (failing pivot {pivot})")


class NotPositiveSemidefinite(MKMCError, ValueError):
    pass


class AsymmetricMatrix(MKMCError, ValueError):
    pass


class QSingular(MKMCError, ValueError):
    """The first argument of a Gaussian KL divergence has no finite log-determinant."""

    def __init__(self, pivot, index=None):
        self.pivot = pivot
        self.index = index
        where = "" if index is None else f" (kernel {index})"
        super().__init__(f"kernel matrix is singular{where}; failing pivot {pivot}")


class NoObservedData(MKMCError, ValueError):
    pass


class ZeroNorm(MKMCError, ValueError):
    pass


class OneClassOnly(MKMCError, ValueError):
    pass


class InvalidMaskPattern(MKMCError, ValueError):
    pass


class KernelParseError(MKMCError, ValueError):
    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        prefix = ", ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ConvergenceError(MKMCError, RuntimeError):
    """A numerical failure inside the completion loop.

    Carries the iteration and kernel index at which it happened.
    """

    def __init__(self, message, iteration=None, index=None):
        self.iteration = iteration
        self.index = index
        super().__init__(message)
