"""
Segmentation losses and activations with analytic gradients.

Losses take a probability map ``p`` and a target map ``t`` of identical
``(height, width, classes)`` shape and return a :class:`LossResult` holding
the scalar loss and ``dL/dp`` with the same shape as ``p``. Values are
pixel means, so they do not grow with resolution.
"""
from dataclasses import dataclass
import logging
import math
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy
import numpy.typing as npt
from scipy import optimize, special

from smqtk_core import Configurable

from maskfuse.exceptions import DimensionMismatchError, InvalidConfigError


LOG = logging.getLogger(__name__)

#: Tolerance on per-pixel class probability sums.
SIMPLEX_TOLERANCE = 1e-6


def _as_3d(values: npt.ArrayLike, what: str) -> numpy.ndarray:
    arr = numpy.array(values, dtype=numpy.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] < 1:
        raise ValueError("%s must be shaped (height, width[, classes]), "
                         "given %s" % (what, arr.shape))
    return arr


class ProbabilityMap:
    """
    Per-pixel class probabilities shaped ``(height, width, classes)``.

    A 2D input is read as a single class map. With two or more classes every
    pixel's probabilities must sum to one.
    """

    __slots__ = ("_probs",)

    def __init__(self, probs: npt.ArrayLike) -> None:
        """
        :raises ValueError: Values outside ``[0, 1]`` or class probabilities
            not summing to one.
        """
        arr = _as_3d(probs, "Probabilities")
        if not numpy.isfinite(arr).all() or arr.min(initial=0) < 0 or \
                arr.max(initial=0) > 1:
            raise ValueError("Probabilities must lie within [0, 1]")
        if arr.shape[2] > 1 and arr.size and \
                numpy.abs(arr.sum(axis=2) - 1).max() > SIMPLEX_TOLERANCE:
            raise ValueError("Class probabilities must sum to 1 per pixel")
        arr.setflags(write=False)
        self._probs = arr

    @property
    def probs(self) -> numpy.ndarray:
        return self._probs

    @property
    def classes(self) -> int:
        return int(self._probs.shape[2])

    @property
    def shape(self) -> Tuple[int, int, int]:
        h, w, m = self._probs.shape
        return int(h), int(w), int(m)


class GroundTruthMap:
    """
    Binary (one class) or one-hot (several classes) targets shaped
    ``(height, width, classes)``.
    """

    __slots__ = ("_targets",)

    def __init__(self, targets: npt.ArrayLike) -> None:
        """
        :raises ValueError: Values other than 0 and 1, or with several
            classes, a pixel that is not one-hot.
        """
        arr = _as_3d(targets, "Targets")
        if not numpy.isin(arr, (0., 1.)).all():
            raise ValueError("Targets must be 0 or 1")
        if arr.shape[2] > 1 and not (arr.sum(axis=2) == 1).all():
            raise ValueError("Targets must be one-hot per pixel")
        arr.setflags(write=False)
        self._targets = arr

    @classmethod
    def from_labels(cls, labels: npt.ArrayLike,
                    classes: int) -> "GroundTruthMap":
        """
        One-hot encode a 2D class index map over ``0..classes-1``.
        """
        lab = numpy.asarray(labels, dtype=numpy.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= classes):
            raise ValueError("Labels must lie within 0..%d" % (classes - 1))
        return cls(numpy.eye(classes)[lab])

    @property
    def targets(self) -> numpy.ndarray:
        return self._targets

    @property
    def classes(self) -> int:
        return int(self._targets.shape[2])

    @property
    def shape(self) -> Tuple[int, int, int]:
        h, w, m = self._targets.shape
        return int(h), int(w), int(m)


@dataclass(frozen=True)
class LossConfig (Configurable):
    """
    Numerical safeguards shared by the losses.

    :param epsilon: Smoothing term of the Dice ratio. Keeps the ratio
        defined when both target and prediction are all zero.
    :param clamp: Log arguments are clipped to ``[clamp, 1 - clamp]``.
    """
    epsilon: float = 1e-6
    clamp: float = 1e-7

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1:
            raise InvalidConfigError("epsilon must lie within (0, 1), "
                                     "given %r" % (self.epsilon,))
        if not 0 < self.clamp < 0.5:
            raise InvalidConfigError("clamp must lie within (0, 0.5), "
                                     "given %r" % (self.clamp,))

    def get_config(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "clamp": self.clamp,
        }


class LossResult (NamedTuple):
    value: float
    gradient: numpy.ndarray


ProbabilityLike = Union[ProbabilityMap, npt.ArrayLike]
TargetLike = Union[GroundTruthMap, npt.ArrayLike]

DEFAULT_CONFIG = LossConfig()


def _arrays(p: ProbabilityLike,
            t: TargetLike) -> Tuple[numpy.ndarray, numpy.ndarray]:
    """
    Raw arrays are accepted without the simplex check so that callers can
    evaluate a loss off the probability simplex, e.g. for finite differences.
    """
    pa = p.probs if isinstance(p, ProbabilityMap) \
        else _as_3d(p, "Probabilities")
    ta = t.targets if isinstance(t, GroundTruthMap) \
        else GroundTruthMap(t).targets
    if pa.shape != ta.shape:
        raise DimensionMismatchError(pa.shape, ta.shape)
    return pa, ta


def dice_loss(p: ProbabilityLike, t: TargetLike,
              cfg: LossConfig = DEFAULT_CONFIG) -> LossResult:
    """
    Soft Dice loss ``1 - (2 Σ t·p + ε) / (Σ t + Σ p + ε)`` over all pixels
    and classes.

    >>> round(dice_loss([[0.8, 0.4]], [[1, 0]]).value, 6)
    0.272727

    :raises DimensionMismatchError: Shapes differ.
    """
    pa, ta = _arrays(p, t)
    eps = cfg.epsilon
    inter = float(numpy.sum(ta * pa))
    denom = float(numpy.sum(ta) + numpy.sum(pa)) + eps
    numer = 2 * inter + eps
    value = 1.0 - numer / denom
    grad = -(2 * ta * denom - numer) / (denom * denom)
    return LossResult(value, grad)


def _clip(pa: numpy.ndarray,
          cfg: LossConfig) -> Tuple[numpy.ndarray, numpy.ndarray]:
    """ :return: Clipped values and a mask of the entries left untouched. """
    clipped = numpy.clip(pa, cfg.clamp, 1 - cfg.clamp)
    return clipped, clipped == pa


def binary_crossentropy(p: ProbabilityLike, t: TargetLike,
                        cfg: LossConfig = DEFAULT_CONFIG) -> LossResult:
    """
    Mean binary cross-entropy ``-(y log ŷ + (1 - y) log(1 - ŷ))`` over all
    entries. Clipped entries have zero gradient.

    :raises DimensionMismatchError: Shapes differ.
    """
    pa, ta = _arrays(p, t)
    q, live = _clip(pa, cfg)
    n = pa.size
    value = float(-numpy.sum(ta * numpy.log(q) +
                             (1 - ta) * numpy.log(1 - q)) / n)
    grad = numpy.where(live, (-ta / q + (1 - ta) / (1 - q)) / n, 0.0)
    return LossResult(value, grad)


def categorical_crossentropy(p: ProbabilityLike, t: TargetLike,
                             cfg: LossConfig = DEFAULT_CONFIG) -> LossResult:
    """
    Mean over pixels of ``-Σ_i y_i log p_i``.

    >>> round(categorical_crossentropy([[[0.3, 0.7]]], [[[0, 1]]]).value, 6)
    0.356675

    :raises DimensionMismatchError: Shapes differ.
    :raises ValueError: Fewer than two classes or targets not one-hot.
    """
    pa, ta = _arrays(p, t)
    if pa.shape[2] < 2:
        raise ValueError("Categorical cross-entropy needs two or more "
                         "classes, given %d" % pa.shape[2])
    q, live = _clip(pa, cfg)
    n = pa.shape[0] * pa.shape[1]
    value = float(-numpy.sum(ta * numpy.log(q)) / n)
    grad = numpy.where(live, -ta / q / n, 0.0)
    return LossResult(value, grad)


#: Cross-entropy forms selectable for :func:`dice_entropy`.
CROSSENTROPY_FORMS = ("binary", "categorical")


def dice_entropy(p: ProbabilityLike, t: TargetLike,
                 cfg: LossConfig = DEFAULT_CONFIG,
                 crossentropy: Optional[str] = None) -> LossResult:
    """
    Dice loss plus cross-entropy. The binary form is used for single class
    maps and the categorical form otherwise, unless ``crossentropy`` names
    one explicitly.

    :raises ValueError: Unknown cross-entropy form.
    """
    pa, ta = _arrays(p, t)
    if crossentropy is None:
        crossentropy = "binary" if pa.shape[2] == 1 else "categorical"
    if crossentropy == "binary":
        ce = binary_crossentropy(pa, ta, cfg)
    elif crossentropy == "categorical":
        ce = categorical_crossentropy(pa, ta, cfg)
    else:
        raise ValueError("Unknown cross-entropy form %r, expected one of %s"
                         % (crossentropy, CROSSENTROPY_FORMS))
    dl = dice_loss(pa, ta, cfg)
    return LossResult(dl.value + ce.value, dl.gradient + ce.gradient)


def mean_empirical_risk(losses: Sequence[float]) -> float:
    """
    Mean of per-sample losses, accumulated with exact float summation.

    :raises ValueError: Empty input.
    """
    if len(losses) == 0:
        raise ValueError("Empirical risk of no samples is undefined")
    return math.fsum(losses) / len(losses)


###############################################################################
# Activations
#
# Each accepts a scalar or an array and returns the same kind.

def sigmoid(x: npt.ArrayLike) -> Any:
    """
    >>> float(sigmoid(0))
    0.5
    """
    return special.expit(x)


def sigmoid_prime(x: npt.ArrayLike) -> Any:
    s = special.expit(x)
    return s * (1 - s)


def swish(x: npt.ArrayLike) -> Any:
    """
    ``x·σ(x)``

    >>> round(float(swish(1.0)), 6)
    0.731059
    """
    return numpy.multiply(x, special.expit(x))


def swish_prime(x: npt.ArrayLike) -> Any:
    s = special.expit(x)
    return s * (1 + numpy.multiply(x, 1 - s))


def relu(x: npt.ArrayLike) -> Any:
    return numpy.maximum(x, 0)


def relu_prime(x: npt.ArrayLike) -> Any:
    """ Zero at ``x = 0``. """
    return numpy.greater(x, 0).astype(numpy.float64)


def swish_minimum() -> Tuple[float, float]:
    """
    Locate the global minimum of swish numerically.

    :return: ``(x, swish(x))`` at the minimum, near
        ``(-1.27846, -0.278465)``.
    """
    res = optimize.minimize_scalar(lambda v: float(swish(v)),
                                   bracket=(-3.0, -1.0, 0.0),
                                   method="brent", tol=1e-12)
    return float(res.x), float(res.fun)
