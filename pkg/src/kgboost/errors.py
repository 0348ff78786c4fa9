"""Exception types shared across the package."""


class KGBError(Exception):
    """Base class for library errors."""


class ParseError(KGBError, ValueError):
    """Malformed tabular input."""


class EmptyDatasetError(KGBError, ValueError):
    pass


class ShapeError(KGBError, ValueError):
    """Feature dimension does not match the fitted quantizer or model."""


class ConfigError(KGBError, ValueError):
    """Hyper-parameters violate a training contract."""


class CapacityError(KGBError):
    """An exhaustive enumeration would exceed its configured cap."""

    def __init__(self, what: str, count: int, cap: int):
        super().__init__(f"{what}: {count} items exceeds the cap of {cap}")
        self.count = count
        self.cap = cap


class NumericalError(KGBError, ArithmeticError):
    pass


class UndefinedMetricError(KGBError, ValueError):
    pass
