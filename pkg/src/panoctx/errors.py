"""Exception types shared across the library."""


class PanoctxError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(PanoctxError):
    """Tensor extents are incompatible with the requested operation."""


class GeometryError(PanoctxError):
    """Attention geometry (segments, pooled grids) does not fit the input."""


class ContractError(PanoctxError):
    """An argument violates a documented precondition."""


class NumericError(PanoctxError):
    """Non-finite values appeared where finite ones are required."""


class SchemaError(PanoctxError):
    """Malformed file, sidecar, or configuration input."""


class UndefinedCorrelationError(PanoctxError):
    """Correlation requested but every candidate pair is degenerate."""
