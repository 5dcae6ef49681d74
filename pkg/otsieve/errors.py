"""
Exception hierarchy. Every error knows the CLI exit code of its family and
renders itself as a JSON-friendly dict.
"""


class OtsieveError(Exception):
    exit_code = 3
    code = "error"

    def __init__(self, message, **details):
        super(OtsieveError, self).__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        out = {
            "error": self.code,
            "type": type(self).__name__,
            "message": self.message,
        }
        for key, val in self.details.items():
            out[key] = _jsonable(val)
        return out


def _jsonable(val):
    if hasattr(val, "tolist"):
        return val.tolist()
    if isinstance(val, dict):
        return {str(k): _jsonable(v) for k, v in val.items()}
    if isinstance(val, (list, tuple)):
        return [_jsonable(v) for v in val]
    if isinstance(val, (str, int, float, bool)) or val is None:
        return val
    return str(val)


class UsageError(OtsieveError):
    exit_code = 1
    code = "usage_error"


class DataError(OtsieveError):
    exit_code = 2
    code = "data_error"


class NumericalError(OtsieveError):
    exit_code = 3
    code = "numerical_failure"


class ConfigError(UsageError):
    pass


class PresetError(UsageError):
    pass


class DimensionError(DataError):
    """
    Raised when an array does not have the shape an operation needs; the
    offending shape is kept in `shape`.
    """

    def __init__(self, message, shape=None, **details):
        super(DimensionError, self).__init__(message, shape=shape, **details)
        self.shape = shape


class DomainError(DataError):
    pass


class CsvFormatError(DataError):
    def __init__(self, message, row=None, column=None, **details):
        super(CsvFormatError, self).__init__(
            message, row=row, column=column, **details
        )
        self.row = row
        self.column = column


class SolverError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """
    Iterative procedure ran out of iterations. `last_iterate` holds whatever
    the procedure had when it gave up.
    """

    def __init__(self, message, last_iterate=None, **details):
        super(ConvergenceError, self).__init__(
            message, last_iterate=last_iterate, **details
        )
        self.last_iterate = last_iterate


class InadmissibleSigmaError(NumericalError):
    pass


class SingularCovarianceError(NumericalError):
    pass


class SingularBreadError(NumericalError):
    def __init__(self, message, smallest_eigenvalue=None, **details):
        super(SingularBreadError, self).__init__(
            message, smallest_eigenvalue=smallest_eigenvalue, **details
        )
        self.smallest_eigenvalue = smallest_eigenvalue


class NonConvexWageError(NumericalError):
    pass


class ReplicationFailureError(NumericalError):
    pass
