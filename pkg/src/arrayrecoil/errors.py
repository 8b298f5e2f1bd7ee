"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class GeometryOutOfRange(ValueError):
    pass


class InvalidGeometry(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


class DefectiveModeError(NumericalFailure):
    """Raised when a mode is (nearly) self-orthogonal under v^T v."""

    def __init__(self, message, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class InstabilityError(NumericalFailure):
    def __init__(self, message, t=None, dt=None):
        super().__init__(message)
        self.t = t
        self.dt = dt


class SingularityError(NumericalFailure):
    pass


class UnsupportedStateError(InvalidArgument):
    pass


class RecoilConsistencyError(NumericalFailure):
    pass


class PeakNotFound(NumericalFailure):
    pass
