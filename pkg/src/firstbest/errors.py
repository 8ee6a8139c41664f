"""Exception types raised across the package."""


class FirstBestError(ValueError):
    """Base class for all errors raised by firstbest."""


class SchemaError(FirstBestError):
    pass


class ParseError(FirstBestError):
    pass


class DegenerateSampleError(FirstBestError):
    pass


class DegenerateSupportError(FirstBestError):
    pass


class DomainError(FirstBestError):
    pass


class ShapeError(FirstBestError):
    pass


class PlacementError(FirstBestError):
    pass


class SingularDesignError(FirstBestError):
    def __init__(self, msg: str, smallest_singular_value: float = float("nan")):
        super().__init__(msg)
        self.smallest_singular_value = smallest_singular_value


class DimensionError(FirstBestError):
    pass


class DegenerateTrimError(FirstBestError):
    pass


class UnsupportedDimensionError(FirstBestError):
    pass


class IntegrandError(FirstBestError):
    def __init__(self, msg: str, point=None):
        super().__init__(msg)
        self.point = point


class BandwidthError(FirstBestError):
    pass


class BandEmptyError(FirstBestError):
    def __init__(self, msg: str, hits: int = 0):
        super().__init__(msg)
        self.hits = hits


class UnknownModelError(FirstBestError):
    pass


class ConfigError(FirstBestError):
    pass


class CellFailure(FirstBestError):
    """A Monte Carlo cell exceeded its allowed failure rate."""
