"""Exception hierarchy shared by the navigation stack and the simulator."""


class FusionNavError(Exception):
    """Base class for all errors raised by this project."""


class ConfigError(FusionNavError, ValueError):
    """Invalid run configuration or missing referenced file."""


class GeodesyError(FusionNavError, ValueError):
    pass


class InvalidCoordinateError(GeodesyError):
    pass


class PolarRegionError(GeodesyError):
    """Latitude too close to a pole for the equirectangular model."""


class AntimeridianError(GeodesyError):
    """Longitude difference crosses the antimeridian; wraparound is not supported."""


class DegenerateAimError(FusionNavError, ValueError):
    """Aim point too close to the vehicle origin to define a heading."""


class NonPositiveAlphaError(FusionNavError, ValueError):
    pass


class EndOfRecordError(FusionNavError, IndexError):
    """Fewer than three seconds of future ticks remain in a driving record."""


class RasterFormatError(FusionNavError, ValueError):
    pass


class RouteError(FusionNavError, ValueError):
    pass


class WorldError(FusionNavError, ValueError):
    pass


class ExternalPredictorError(FusionNavError, RuntimeError):
    pass


class RecordFormatError(FusionNavError, ValueError):
    pass


class EvaluationError(FusionNavError, ValueError):
    """Nothing to score, or records that cannot be paired with their ground truth."""
