"""
Alpha-blended instance overlays for visual inspection.
"""
from dataclasses import dataclass
import logging
from typing import Sequence, Tuple, Union

import numpy

from maskfuse.exceptions import DimensionMismatchError, InvalidConfigError
from maskfuse.fusion import InstanceSet
from maskfuse.raster import GrayImage, RgbImage


LOG = logging.getLogger(__name__)

#: Instance colors, cycled by instance id.
PALETTE: Tuple[Tuple[int, int, int], ...] = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (170, 110, 40),
)


def color_for(instance_id: int) -> Tuple[int, int, int]:
    """
    >>> color_for(1) == color_for(13)
    True
    """
    return PALETTE[(instance_id - 1) % len(PALETTE)]


@dataclass(frozen=True)
class OverlaySpec:
    """
    :param alpha: Opacity of instance colors, 0 shows only the base image.
    """
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not 0 <= self.alpha <= 1:
            raise InvalidConfigError("alpha must lie within [0, 1], given %r"
                                     % (self.alpha,))


def render_overlay(base: Union[RgbImage, GrayImage],
                   instance_sets: Sequence[InstanceSet],
                   spec: OverlaySpec = OverlaySpec()) -> RgbImage:
    """
    Blend each instance's color into the base image. Sets are drawn in the
    order given and instances by ascending id, later draws on top.

    :raises DimensionMismatchError: A set's canvas differs from the image.
    """
    if isinstance(base, GrayImage):
        base = RgbImage.from_gray(base)
    out = base.samples.astype(numpy.float64)
    a = spec.alpha
    for iset in instance_sets:
        if iset.shape != base.shape:
            raise DimensionMismatchError(base.shape, iset.shape)
        for inst in sorted(iset, key=lambda i: i.id):
            sel = inst.mask.bits
            color = numpy.array(color_for(inst.id), dtype=numpy.float64)
            out[sel] = (1 - a) * out[sel] + a * color
    LOG.debug("Rendered overlay of %d instance set(s) at alpha %g",
              len(instance_sets), a)
    return RgbImage(numpy.rint(out))
