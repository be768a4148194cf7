"""
Synthetic scenes of long thin stripes with fragmented instance predictions,
plus the geometric and photometric augmentations used on them.

Every random draw goes through a ``numpy.random.Generator`` created from an
explicit seed inside the call, so results depend only on the arguments.
"""
from dataclasses import dataclass, field
import enum
import logging
import math
from typing import Any, Dict, List, Mapping, NamedTuple, Sequence, Tuple, \
    TypeVar, Union

import numpy
from scipy import ndimage

from maskfuse.exceptions import MalformedInputError
from maskfuse.fusion import Instance, InstanceSet
from maskfuse.raster import BinaryMask, GrayImage, Polygon, RgbImage, \
    rasterize


LOG = logging.getLogger(__name__)

#: Rendering colors of the scene image.
BACKGROUND_RGB = (38, 40, 48)
STRIPE_RGB = (214, 204, 172)
BLOB_RGB = (150, 152, 164)
#: Standard deviation of the sensor noise added to rendered scenes.
RENDER_NOISE = 3.0
#: Minimum clearance in pixels between a noise blob and any stripe.
BLOB_CLEARANCE = 2


class Stripe (NamedTuple):
    """
    Rotated rectangle. ``angle`` is in degrees, counterclockwise as
    displayed, with 0 along the x axis.
    """
    cx: float
    cy: float
    length: float
    width: float
    angle: float

    def _axes(self) -> Tuple[numpy.ndarray, numpy.ndarray]:
        a = math.radians(self.angle)
        along = numpy.array([math.cos(a), -math.sin(a)])
        across = numpy.array([math.sin(a), math.cos(a)])
        return along, across

    def segment(self, start: float, length: float) -> Polygon:
        """
        Sub-rectangle covering ``[start, start + length)`` measured along
        the stripe from its first end.
        """
        along, across = self._axes()
        c = numpy.array([self.cx, self.cy])
        a0 = c + along * (start - self.length / 2)
        a1 = a0 + along * length
        h = across * (self.width / 2)
        return Polygon([a0 - h, a1 - h, a1 + h, a0 + h])

    def polygon(self) -> Polygon:
        return self.segment(0, self.length)


@dataclass(frozen=True)
class SceneSpec:
    """
    Recipe of a synthetic scene.

    :param width: Canvas width.
    :param height: Canvas height.
    :param stripes: Objects to draw.
    :param fragments: Pieces each stripe's prediction is cut into.
    :param gap: Length in pixels removed between consecutive pieces.
    :param noise_blobs: Number of disk shaped false positives added to the
        fragmented predictions only.
    :param blob_radius: Inclusive ``(min, max)`` blob radius range.
    :param rng_seed: Seed of every random draw of the scene.
    :param class_id: Class of all stripe instances.
    """
    width: int
    height: int
    stripes: Tuple[Stripe, ...]
    fragments: int = 1
    gap: float = 0.0
    noise_blobs: int = 0
    blob_radius: Tuple[float, float] = (2.0, 4.0)
    rng_seed: int = 0
    class_id: int = 1

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("Canvas size must be positive")
        if self.fragments < 1:
            raise ValueError("fragments must be at least 1, given %d"
                             % self.fragments)
        if self.gap < 0:
            raise ValueError("gap must be non-negative")
        if self.noise_blobs < 0:
            raise ValueError("noise_blobs must be non-negative")
        r0, r1 = self.blob_radius
        if not 0 < r0 <= r1:
            raise ValueError("blob_radius must satisfy 0 < min <= max")
        for s in self.stripes:
            if s.width < 1 or s.length <= 0:
                raise ValueError("Stripe %s must have width >= 1 and a "
                                 "positive length" % (s,))
            if self.fragments > 1 and \
                    self.gap >= s.length / self.fragments:
                raise ValueError("gap %g must be below length/fragments "
                                 "(%g) for stripe %s"
                                 % (self.gap, s.length / self.fragments, s))

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "SceneSpec":
        """
        :raises MalformedInputError: Missing or invalid fields.
        """
        try:
            stripes = tuple(
                Stripe(float(s["cx"]), float(s["cy"]), float(s["length"]),
                       float(s["width"]), float(s.get("angle", 0.0)))
                for s in doc["stripes"]
            )
            blobs = doc.get("noise_blobs", {})
            if isinstance(blobs, Mapping):
                blob_count = int(blobs.get("count", 0))
                radius = blobs.get("radius", [2.0, 4.0])
            else:
                blob_count = int(blobs)
                radius = doc.get("blob_radius", [2.0, 4.0])
            return cls(
                width=int(doc["width"]), height=int(doc["height"]),
                stripes=stripes,
                fragments=int(doc.get("fragments", 1)),
                gap=float(doc.get("gap", 0.0)),
                noise_blobs=blob_count,
                blob_radius=(float(radius[0]), float(radius[1])),
                rng_seed=int(doc.get("rng_seed", 0)),
                class_id=int(doc.get("class_id", 1)),
            )
        except (KeyError, TypeError, ValueError, IndexError) as ex:
            raise MalformedInputError("Invalid scene spec: %s" % ex) from ex

    def to_json(self) -> Dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "stripes": [s._asdict() for s in self.stripes],
            "fragments": self.fragments,
            "gap": self.gap,
            "noise_blobs": {"count": self.noise_blobs,
                            "radius": list(self.blob_radius)},
            "rng_seed": self.rng_seed,
            "class_id": self.class_id,
        }


@dataclass
class SyntheticScene:
    ground_truth: InstanceSet
    fragmented: InstanceSet
    semantic: BinaryMask
    image: RgbImage
    #: Fragment id to the ground truth id it was cut from. Noise blobs are
    #: absent.
    owners: Dict[int, int] = field(default_factory=dict)


def _disk(cx: float, cy: float, r: float, width: int,
          height: int) -> numpy.ndarray:
    yy, xx = numpy.ogrid[:height, :width]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _render(spec: SceneSpec, semantic: numpy.ndarray,
            blobs: numpy.ndarray, rng: numpy.random.Generator) -> RgbImage:
    img = numpy.empty((spec.height, spec.width, 3), dtype=numpy.float64)
    img[...] = BACKGROUND_RGB
    img[semantic] = STRIPE_RGB
    img[blobs] = BLOB_RGB
    img += rng.normal(0, RENDER_NOISE, img.shape)
    return RgbImage(numpy.rint(numpy.clip(img, 0, 255)))


def generate(spec: SceneSpec) -> SyntheticScene:
    """
    Render a scene: one ground truth instance per stripe, ``fragments``
    equal pieces per stripe separated by ``gap`` pixels, the union of the
    stripes as semantic mask, and an RGB image.

    :raises ValueError: A stripe covers no pixel of the canvas.
    """
    w, h = spec.width, spec.height
    rng = numpy.random.default_rng(spec.rng_seed)
    truth: List[Instance] = []
    frags: List[Instance] = []
    owners: Dict[int, int] = {}
    semantic = numpy.zeros((h, w), dtype=bool)
    f = spec.fragments
    for sid, stripe in enumerate(spec.stripes, start=1):
        full = rasterize(stripe.polygon(), w, h)
        if full.is_empty():
            raise ValueError("Stripe %d %s lies off the canvas"
                             % (sid, stripe))
        truth.append(Instance(sid, spec.class_id, full))
        semantic |= full.bits
        piece = (stripe.length - (f - 1) * spec.gap) / f
        for k in range(f):
            if f == 1:
                bits = full.bits
            else:
                seg = rasterize(stripe.segment(k * (piece + spec.gap),
                                               piece), w, h)
                bits = seg.bits & full.bits
            if not bits.any():
                LOG.debug("Fragment %d of stripe %d is off canvas", k, sid)
                continue
            fid = len(frags) + 1
            frags.append(Instance(fid, spec.class_id,
                                  BinaryMask.adopt(numpy.array(bits))))
            owners[fid] = sid

    keep_out = ndimage.binary_dilation(
        semantic, structure=numpy.ones((3, 3), dtype=bool),
        iterations=BLOB_CLEARANCE
    ) if semantic.any() else semantic
    blobs = numpy.zeros((h, w), dtype=bool)
    r0, r1 = spec.blob_radius
    for b in range(spec.noise_blobs):
        for _ in range(100):
            r = rng.uniform(r0, r1)
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            disk = _disk(cx, cy, r, w, h)
            if disk.any() and not (disk & (keep_out | blobs)).any():
                break
        else:
            LOG.warning("Could not place noise blob %d clear of the "
                        "stripes", b)
            continue
        blobs |= disk
        frags.append(Instance(len(frags) + 1, spec.class_id,
                              BinaryMask.adopt(disk)))

    image = _render(spec, semantic, blobs, rng)
    LOG.debug("Generated scene: %d stripe(s), %d fragment instance(s)",
              len(truth), len(frags))
    return SyntheticScene(
        ground_truth=InstanceSet(w, h, truth),
        fragmented=InstanceSet(w, h, frags),
        semantic=BinaryMask.adopt(semantic),
        image=image,
        owners=owners,
    )


def random_scene_spec(seed: int, width: int = 256, height: int = 256,
                      max_stripes: int = 5,
                      angle_range: Tuple[float, float] = (10.0, 80.0),
                      fragment_range: Tuple[int, int] = (2, 5),
                      noise_blobs: int = 0,
                      separation: int = 3) -> SceneSpec:
    """
    Draw a valid scene spec with 1 to ``max_stripes`` stripes kept at least
    ``separation`` pixels apart, so every stripe forms its own semantic
    region.
    """
    rng = numpy.random.default_rng(seed)
    n = int(rng.integers(1, max_stripes + 1))
    short = min(width, height)
    placed: List[Stripe] = []
    occupied = numpy.zeros((height, width), dtype=bool)
    structure = numpy.ones((3, 3), dtype=bool)
    for _ in range(n):
        for _attempt in range(200):
            length = rng.uniform(0.3, 0.6) * short
            sw = rng.uniform(3.0, 7.0)
            angle = rng.uniform(*angle_range)
            a = math.radians(angle)
            ex = abs(math.cos(a)) * length / 2 + sw
            ey = abs(math.sin(a)) * length / 2 + sw
            if 2 * ex >= width or 2 * ey >= height:
                continue
            s = Stripe(rng.uniform(ex, width - ex),
                       rng.uniform(ey, height - ey), length, sw, angle)
            m = rasterize(s.polygon(), width, height).bits
            grown = ndimage.binary_dilation(m, structure=structure,
                                            iterations=separation)
            if not (grown & occupied).any():
                placed.append(s)
                occupied |= m
                break
    if not placed:
        raise ValueError("Could not place a stripe on a %dx%d canvas"
                         % (width, height))
    f = int(rng.integers(fragment_range[0], fragment_range[1] + 1))
    min_len = min(s.length for s in placed)
    gap = float(min(rng.uniform(2.0, 5.0), 0.5 * min_len / f))
    return SceneSpec(width, height, tuple(placed), fragments=f, gap=gap,
                     noise_blobs=noise_blobs,
                     rng_seed=int(rng.integers(2 ** 63)))


###############################################################################
# Augmentation

class GeometricParams (NamedTuple):
    """
    :param scale: Resize factor, positive.
    :param rotation_deg: Counterclockwise rotation as displayed.
    :param shear: Horizontal shear factor, the distortion component.
    """
    scale: float = 1.0
    rotation_deg: float = 0.0
    shear: float = 0.0


class AdvancedParams (NamedTuple):
    gaussian_blur_sigma: float = 0.0
    gaussian_noise_stddev: float = 0.0
    noise_seed: int = 0
    brightness_delta: float = 0.0
    sharpness_amount: float = 0.0


#: Blur radius used for the unsharp mask of the sharpness filter.
SHARPEN_SIGMA = 1.0


def _forward_matrix(params: GeometricParams) -> numpy.ndarray:
    """ 2x2 forward transform in ``(x, y)`` coordinates. """
    if params.scale <= 0:
        raise ValueError("Scale must be positive, given %r" % params.scale)
    a = math.radians(params.rotation_deg)
    rot = numpy.array([[math.cos(a), math.sin(a)],
                       [-math.sin(a), math.cos(a)]])
    shear = numpy.array([[1.0, params.shear], [0.0, 1.0]])
    # Rounding snaps quarter turns to exact pixel permutations.
    return numpy.round(rot @ shear * params.scale, 12)


def _center(width: int, height: int) -> numpy.ndarray:
    return numpy.array([(width - 1) / 2, (height - 1) / 2])


def transform_polygon(polygon: Polygon, params: GeometricParams,
                      width: int, height: int) -> Polygon:
    """
    Apply the forward transform of :func:`geometric_augment` to polygon
    vertices.
    """
    fwd = _forward_matrix(params)
    c = _center(width, height)
    return Polygon((polygon.vertices - c) @ fwd.T + c)


ImageT = TypeVar("ImageT", GrayImage, RgbImage)


def _warp(arr: numpy.ndarray, matrix: numpy.ndarray, offset: numpy.ndarray,
          order: int) -> numpy.ndarray:
    return ndimage.affine_transform(arr, matrix, offset=offset, order=order,
                                    mode="constant", cval=0.0)


def geometric_augment(
    img: ImageT,
    masks: Sequence[BinaryMask],
    params: GeometricParams = GeometricParams(),
) -> Tuple[ImageT, List[BinaryMask]]:
    """
    Scale, rotate and shear about the canvas center, keeping the canvas
    size. The image is resampled bilinearly and masks by nearest neighbor,
    so they stay binary. Uncovered pixels become 0.

    :raises ValueError: Non-positive scale.
    :raises DimensionMismatchError: A mask does not match the image.
    """
    fwd = _forward_matrix(params)
    inv = numpy.linalg.inv(fwd)
    # (x, y) to (row, col) index order.
    swap = numpy.array([[0.0, 1.0], [1.0, 0.0]])
    matrix = numpy.round(swap @ inv @ swap, 12)
    c = _center(img.width, img.height)[::-1]
    offset = c - matrix @ c

    template = BinaryMask.empty(img.width, img.height)
    for m in masks:
        template.check_same_size(m)

    samples = img.samples.astype(numpy.float64)
    if samples.ndim == 2:
        warped = _warp(samples, matrix, offset, 1)
    else:
        warped = numpy.stack([_warp(samples[:, :, i], matrix, offset, 1)
                              for i in range(samples.shape[2])], axis=2)
    out_img = type(img)(numpy.rint(numpy.clip(warped, 0, 255)))
    out_masks = [
        BinaryMask.adopt(_warp(m.bits.astype(numpy.uint8), matrix, offset,
                               0) > 0)
        for m in masks
    ]
    return out_img, out_masks


def gaussian_kernel(sigma: float) -> numpy.ndarray:
    """
    Normalized 1D Gaussian weights truncated at ``ceil(3 sigma)``.

    >>> gaussian_kernel(0.0).tolist()
    [1.0]

    :raises ValueError: Negative sigma.
    """
    if sigma < 0:
        raise ValueError("Sigma must be non-negative, given %r" % sigma)
    if sigma == 0:
        return numpy.ones(1)
    radius = int(math.ceil(3 * sigma))
    x = numpy.arange(-radius, radius + 1, dtype=numpy.float64)
    k = numpy.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur(arr: numpy.ndarray, sigma: float) -> numpy.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(arr, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def advanced_augment(img: ImageT,
                     params: AdvancedParams = AdvancedParams()) -> ImageT:
    """
    Photometric augmentation applied in order: Gaussian blur, sharpness
    (unsharp mask), additive brightness, then seeded Gaussian noise. The
    result is clamped to ``[0, 255]``.

    :raises ValueError: Negative sigma or noise deviation.
    """
    if params.gaussian_blur_sigma < 0 or params.gaussian_noise_stddev < 0:
        raise ValueError("Blur sigma and noise deviation must be "
                         "non-negative")
    arr = img.samples.astype(numpy.float64)
    if params.gaussian_blur_sigma > 0:
        arr = _blur(arr, params.gaussian_blur_sigma)
    if params.sharpness_amount != 0:
        arr = numpy.clip(
            arr + params.sharpness_amount * (arr - _blur(arr, SHARPEN_SIGMA)),
            0, 255
        )
    if params.brightness_delta != 0:
        arr = arr + params.brightness_delta
    if params.gaussian_noise_stddev > 0:
        rng = numpy.random.default_rng(params.noise_seed)
        arr = arr + rng.normal(0, params.gaussian_noise_stddev, arr.shape)
    return type(img)(numpy.rint(numpy.clip(arr, 0, 255)))


class AugmentationLevel (enum.Enum):
    NONE = "none"
    GEOMETRIC = "geometric"
    ADVANCED = "advanced"


def sample_geometric(rng: numpy.random.Generator) -> GeometricParams:
    return GeometricParams(scale=float(rng.uniform(0.9, 1.1)),
                           rotation_deg=float(rng.uniform(-15, 15)),
                           shear=float(rng.uniform(-0.1, 0.1)))


def sample_advanced(rng: numpy.random.Generator) -> AdvancedParams:
    return AdvancedParams(gaussian_blur_sigma=float(rng.uniform(0, 1.5)),
                          gaussian_noise_stddev=float(rng.uniform(0, 8)),
                          noise_seed=int(rng.integers(2 ** 32)),
                          brightness_delta=float(rng.uniform(-20, 20)),
                          sharpness_amount=float(rng.uniform(0, 1)))


def augment(img: ImageT, masks: Sequence[BinaryMask],
            level: Union[AugmentationLevel, str],
            seed: int) -> Tuple[ImageT, List[BinaryMask]]:
    """
    Apply randomly drawn augmentations of the given level. ``geometric``
    warps image and masks together; ``advanced`` additionally alters the
    image photometrically. ``none`` returns the inputs unchanged.
    """
    level = AugmentationLevel(level)
    if level is AugmentationLevel.NONE:
        return img, list(masks)
    rng = numpy.random.default_rng(seed)
    img, out_masks = geometric_augment(img, masks, sample_geometric(rng))
    if level is AugmentationLevel.ADVANCED:
        img = advanced_augment(img, sample_advanced(rng))
    return img, out_masks


def split_indices(n: int, seed: int, test_fraction: float = 0.20,
                  validation_fraction: float = 0.16,
                  ) -> Tuple[List[int], List[int], List[int]]:
    """
    Shuffle ``0..n-1`` and split off test and validation shares.

    >>> train, val, test = split_indices(25, seed=0)
    >>> len(train), len(val), len(test)
    (16, 4, 5)

    :return: Sorted ``(train, validation, test)`` index lists.
    :raises ValueError: Fractions outside ``[0, 1]`` or summing above 1.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not (0 <= test_fraction <= 1 and 0 <= validation_fraction <= 1 and
            test_fraction + validation_fraction <= 1):
        raise ValueError("Split fractions must lie within [0, 1] and sum "
                         "to at most 1")
    perm = numpy.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    n_val = min(int(round(n * validation_fraction)), n - n_test)
    test = sorted(int(i) for i in perm[:n_test])
    val = sorted(int(i) for i in perm[n_test:n_test + n_val])
    train = sorted(int(i) for i in perm[n_test + n_val:])
    return train, val, test
