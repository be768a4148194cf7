from .interfaces.raster_element import RasterElement, from_uri  # noqa: F401

from .raster import (  # noqa: F401
    BinaryMask, ComponentLabeling, GrayImage, Polygon, RgbImage
)
from .fusion import (  # noqa: F401
    FusionConfig, FusionReport, Instance, InstanceSet, fuse
)
from .lossmath import LossConfig  # noqa: F401
from .schedule import ScheduleConfig  # noqa: F401
