"""
Overlap metrics over binary masks and class labelings.

Both-empty comparisons score a perfect ``1.0`` for IoU and Dice, so a class
missing from both prediction and truth does not drag a mean down.
"""
import logging
from typing import Any, Dict, List, NamedTuple, Sequence, Tuple

import numpy
import numpy.typing as npt

from maskfuse.exceptions import DimensionMismatchError
from maskfuse.raster import BinaryMask, GrayImage, intersect_count


LOG = logging.getLogger(__name__)


def _counts(a: BinaryMask, b: BinaryMask) -> Tuple[int, int, int]:
    """ :return: ``|A ∩ B|``, ``|A|``, ``|B|`` """
    inter = intersect_count(a, b)
    return inter, a.area, b.area


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """
    Intersection over union ``|A ∩ B| / |A ∪ B|``, ``1.0`` when both masks
    are empty.

    >>> iou(BinaryMask([[1, 1, 0]]), BinaryMask([[0, 1, 1]]))
    0.3333333333333333

    :raises DimensionMismatchError: Masks differ in size.
    """
    inter, na, nb = _counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """
    Dice coefficient ``2|A ∩ B| / (|A| + |B|)``, ``1.0`` when both masks are
    empty.

    :raises DimensionMismatchError: Masks differ in size.
    """
    inter, na, nb = _counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2 * inter / (na + nb)


def containment(a: BinaryMask, b: BinaryMask) -> float:
    """
    Fraction of candidate ``b`` lying inside reference ``a``,
    ``|A ∩ B| / |B|``.

    :raises DimensionMismatchError: Masks differ in size.
    :raises ValueError: ``b`` is empty.
    """
    inter, _, nb = _counts(a, b)
    if nb == 0:
        raise ValueError("Containment of an empty mask is undefined")
    return inter / nb


class ConfusionCounts (NamedTuple):
    """
    Pixel confusion of a candidate mask against a reference mask.
    """
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def containment(self) -> float:
        """
        ``tp / (tp + fp)``

        :raises ValueError: Candidate was empty.
        """
        if self.tp + self.fp == 0:
            raise ValueError("Containment of an empty mask is undefined")
        return self.tp / (self.tp + self.fp)


def confusion(a: BinaryMask, b: BinaryMask) -> ConfusionCounts:
    """
    :param a: Reference mask.
    :param b: Candidate mask.

    :raises DimensionMismatchError: Masks differ in size.
    """
    inter, na, nb = _counts(a, b)
    total = a.width * a.height
    return ConfusionCounts(tp=inter, fp=nb - inter, fn=na - inter,
                           tn=total - na - nb + inter)


class EvalReport (NamedTuple):
    """
    Per-class IoU values and their arithmetic mean.
    """
    per_class_iou: List[Tuple[int, float]]
    mean_iou: float

    @property
    def n(self) -> int:
        """ Number of evaluated classes. """
        return len(self.per_class_iou)

    def to_json(self) -> Dict[str, Any]:
        return {
            "classes": [{"id": c, "iou": v} for c, v in self.per_class_iou],
            "mean_iou": self.mean_iou,
        }


def mean_iou(predictions: npt.ArrayLike, ground_truth: npt.ArrayLike,
             classes: Sequence[int]) -> EvalReport:
    """
    Class-vs-rest IoU for each listed class, averaged over exactly the
    listed classes.

    :param predictions: 2D class-id map.
    :param ground_truth: 2D class-id map of the same shape.
    :param classes: Class ids to evaluate, in report order.

    :raises DimensionMismatchError: Maps differ in shape.
    :raises ValueError: Empty class list.
    """
    pred = numpy.asarray(predictions)
    truth = numpy.asarray(ground_truth)
    if pred.shape != truth.shape:
        raise DimensionMismatchError(pred.shape, truth.shape)
    if len(classes) == 0:
        raise ValueError("At least one class is required")
    per_class: List[Tuple[int, float]] = []
    for c in classes:
        per_class.append((int(c), iou(BinaryMask.adopt(pred == c),
                                      BinaryMask.adopt(truth == c))))
    mean = float(numpy.mean([v for _, v in per_class]))
    LOG.debug("Mean IoU over %d class(es): %f", len(per_class), mean)
    return EvalReport(per_class, mean)


def channel_variance(img: GrayImage) -> float:
    """
    Population variance of the samples of a single channel image. Use
    :meth:`RgbImage.channel` to pick a channel of a color image.

    >>> channel_variance(GrayImage([[0, 0], [255, 255]]))
    16256.25

    :raises ValueError: Image has no samples.
    """
    s = img.samples
    if s.size == 0:
        raise ValueError("Variance of an empty image is undefined")
    return float(numpy.var(s.astype(numpy.float64)))


def matched_instance_iou(predicted: Sequence[BinaryMask],
                         truth: Sequence[BinaryMask]) -> float:
    """
    Mean over truth instances of the best IoU any predicted instance
    reaches with it. Unmatched truth instances score ``0.0``; two empty
    lists score ``1.0``.

    :raises DimensionMismatchError: Masks do not share one canvas.
    """
    if not truth:
        return 1.0 if not predicted else 0.0
    best = numpy.zeros(len(truth))
    for i, t in enumerate(truth):
        for p in predicted:
            best[i] = max(best[i], iou(t, p))
    return float(best.mean())
