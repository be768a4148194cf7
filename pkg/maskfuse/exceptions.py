from typing import Sequence


class DimensionMismatchError (ValueError):
    """
    Two rasters that must share a canvas do not.
    """

    def __init__(self, shape_a: Sequence[int], shape_b: Sequence[int]) -> None:
        super(DimensionMismatchError, self).__init__(
            "Raster dimensions differ: %s vs %s"
            % (tuple(shape_a), tuple(shape_b))
        )
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)


class MalformedInputError (ValueError):
    """
    Input document or image does not follow the expected format.
    """


class InvalidConfigError (ValueError):
    """
    A configuration value violates its documented constraints.
    """


class NoUriResolutionError (Exception):
    """
    Standard exception thrown by base RasterElement from_uri method when a
    subclass does not implement URI resolution.
    """


class InvalidUriError (Exception):
    """
    An invalid URI was provided.
    """

    def __init__(self, uri_value: str, reason: str) -> None:
        super(InvalidUriError, self).__init__(uri_value, reason)
        self.uri = uri_value
        self.reason = reason
