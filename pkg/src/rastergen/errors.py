"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An array argument has the wrong rank, extent, or dtype."""


class ConfigError(ValueError):
    """A config value is out of range or inconsistent with its siblings."""


class FormatError(ValueError):
    """Bytes on disk do not parse as the format they claim to be."""


class CapacityError(RuntimeError):
    """A bounded buffer (decode cache, code queue) was asked to grow past its limit."""


class DivergenceError(RuntimeError):
    """A training loss became NaN or infinite."""


class MetricNotReadyError(RuntimeError):
    """A metric was queried before any data reached it."""
