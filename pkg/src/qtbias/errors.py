"""Exception hierarchy.

Every error raised by the library derives from :class:`QTBiasError` and can be
serialised with :meth:`QTBiasError.to_dict`, which the command line front end
uses for its machine-readable error output.
"""


class QTBiasError(Exception):
    """Base class for all library errors."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        out.update({k: _jsonable(v) for k, v in self.details.items()})
        return out


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


class NonHermitianError(QTBiasError, ValueError):
    def __init__(self, defect):
        super().__init__(f"matrix is not Hermitian (defect {defect:.3e})", defect=defect)
        self.defect = defect


class IndefiniteMatrixError(QTBiasError, ValueError):
    def __init__(self, eigenvalue):
        super().__init__(
            f"matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e})",
            eigenvalue=eigenvalue,
        )
        self.eigenvalue = eigenvalue


class SingularMatrixError(QTBiasError, ValueError):
    def __init__(self, eigenvalue):
        super().__init__(
            f"matrix is numerically singular (min eigenvalue {eigenvalue:.3e})",
            eigenvalue=eigenvalue,
        )
        self.eigenvalue = eigenvalue


class DegenerateScheduleError(QTBiasError):
    """A G-matrix of the tilted recursion lost positive definiteness."""

    def __init__(self, step, eigenvalue):
        super().__init__(
            f"degenerate bias schedule: G^2 before collision {step} has min "
            f"eigenvalue {eigenvalue:.3e}; the biased ensemble is not realisable here",
            step=step,
            eigenvalue=eigenvalue,
        )
        self.step = step
        self.eigenvalue = eigenvalue


class InvalidDensityMatrixError(QTBiasError, ValueError):
    def __init__(self, reason, defect):
        super().__init__(f"invalid density matrix: {reason} (defect {defect:.3e})",
                         reason=reason, defect=defect)
        self.defect = defect


class NumericalDegradationError(QTBiasError, ArithmeticError):
    pass


class UndefinedDerivativeError(QTBiasError, ArithmeticError):
    pass


class StepSizeError(QTBiasError, ValueError):
    pass


class EnumerationCapError(QTBiasError, ValueError):
    pass


class NoOverlapError(QTBiasError, ValueError):
    pass


class EmptyMeasureError(QTBiasError, ValueError):
    pass


class PerfectCollapseError(QTBiasError, ZeroDivisionError):
    """Raised by the quality factor when the reference measure is exactly zero.

    ``q`` carries the ``+inf`` sentinel for callers that want to report it.
    """

    q = float("inf")


class ConfigError(QTBiasError, ValueError):
    def __init__(self, problems):
        # problems: list of (field path, message)
        text = "; ".join(f"{path}: {msg}" for path, msg in problems)
        super().__init__(f"invalid configuration: {text}",
                         problems=[f"{p}: {m}" for p, m in problems])
        self.problems = list(problems)
