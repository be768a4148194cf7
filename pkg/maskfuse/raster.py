"""
Mask, image and polygon value types and the raster operations the rest of
the package builds on.

Coordinates: x grows rightward, y grows downward, and ``(0, 0)`` is the
center of the top-left pixel. Arrays are indexed ``[row, col]``, i.e.
``[y, x]``.

All types here are immutable after construction: the wrapped arrays are
flagged read-only.
"""
import logging
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy
import numpy.typing as npt
from scipy import ndimage

from maskfuse.exceptions import DimensionMismatchError


LOG = logging.getLogger(__name__)

#: Structuring elements for the supported pixel connectivities.
CONNECTIVITY_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}

BBox = Tuple[int, int, int, int]


def _read_only(arr: numpy.ndarray) -> numpy.ndarray:
    arr.setflags(write=False)
    return arr


def check_connectivity(connectivity: int) -> int:
    """
    :raises ValueError: Connectivity is neither 4 nor 8.
    :return: The given connectivity.
    """
    if connectivity not in CONNECTIVITY_STRUCTURES:
        raise ValueError("Connectivity must be 4 or 8, given %r"
                         % (connectivity,))
    return connectivity


class BinaryMask:
    """
    Rectangular raster of foreground/background bits.

    >>> m = BinaryMask([[1, 0], [1, 1]])
    >>> m.width, m.height, m.area
    (2, 2, 3)
    """

    __slots__ = ("_bits",)

    # Equality is content based and arrays are not hashable.
    __hash__ = None  # type: ignore

    def __init__(self, bits: npt.ArrayLike) -> None:
        """
        :param bits: 2D array-like of truthy values, ``[row][col]`` ordered.
            A copy is taken.
        :raises ValueError: Input is not 2-dimensional.
        """
        arr = numpy.array(bits, dtype=bool)
        if arr.ndim != 2:
            raise ValueError("Mask bits must be 2-dimensional, given shape %s"
                             % (arr.shape,))
        self._bits = _read_only(arr)

    @classmethod
    def adopt(cls, arr: numpy.ndarray) -> "BinaryMask":
        """
        Wrap a boolean array without copying it. The array is flagged
        read-only, so the caller must not keep writing to it.
        """
        if arr.dtype != bool or arr.ndim != 2:
            return cls(arr)
        inst = cls.__new__(cls)
        inst._bits = _read_only(arr)
        return inst

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls.adopt(numpy.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls.adopt(numpy.ones((height, width), dtype=bool))

    @property
    def bits(self) -> numpy.ndarray:
        """ Read-only boolean array of shape ``(height, width)``. """
        return self._bits

    @property
    def width(self) -> int:
        return int(self._bits.shape[1])

    @property
    def height(self) -> int:
        return int(self._bits.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def area(self) -> int:
        """ Number of foreground pixels. """
        return int(numpy.count_nonzero(self._bits))

    def is_empty(self) -> bool:
        return not self._bits.any()

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, BinaryMask) and
            self.shape == other.shape and
            bool(numpy.array_equal(self._bits, other._bits))
        )

    def __repr__(self) -> str:
        return "%s{width: %d, height: %d, area: %d}" \
            % (self.__class__.__name__, self.width, self.height, self.area)

    def check_same_size(self, other: "BinaryMask") -> None:
        """
        :raises DimensionMismatchError: Other mask has another canvas size.
        """
        if self.shape != other.shape:
            raise DimensionMismatchError(self.shape, other.shape)

    def intersection(self, other: "BinaryMask") -> "BinaryMask":
        self.check_same_size(other)
        return BinaryMask.adopt(self._bits & other._bits)

    def union(self, other: "BinaryMask") -> "BinaryMask":
        self.check_same_size(other)
        return BinaryMask.adopt(self._bits | other._bits)

    def difference(self, other: "BinaryMask") -> "BinaryMask":
        self.check_same_size(other)
        return BinaryMask.adopt(self._bits & ~other._bits)

    def bbox(self) -> Optional[BBox]:
        """
        :return: Half-open ``(x0, y0, x1, y1)`` bounds of the foreground, or
            None for an empty mask.
        """
        rows = numpy.flatnonzero(self._bits.any(axis=1))
        if rows.size == 0:
            return None
        cols = numpy.flatnonzero(self._bits.any(axis=0))
        return (int(cols[0]), int(rows[0]),
                int(cols[-1]) + 1, int(rows[-1]) + 1)


class _Image:
    """
    Shared behavior of 8-bit sample rasters.
    """

    __slots__ = ("_samples",)
    __hash__ = None  # type: ignore

    #: Number of channels, 1 or 3.
    CHANNELS = 0

    def __init__(self, samples: npt.ArrayLike) -> None:
        arr = numpy.array(samples)
        expected_ndim = 2 if self.CHANNELS == 1 else 3
        if arr.ndim != expected_ndim or \
                (self.CHANNELS > 1 and arr.shape[2] != self.CHANNELS):
            raise ValueError("%s samples must have %d dimension(s) with %d "
                             "channel(s), given shape %s"
                             % (self.__class__.__name__, expected_ndim,
                                self.CHANNELS, arr.shape))
        if arr.dtype != numpy.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("Samples must lie within [0, 255]")
            arr = numpy.rint(arr).astype(numpy.uint8)
        self._samples = _read_only(arr)

    @property
    def samples(self) -> numpy.ndarray:
        return self._samples

    @property
    def width(self) -> int:
        return int(self._samples.shape[1])

    @property
    def height(self) -> int:
        return int(self._samples.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def __eq__(self, other: object) -> bool:
        return (
            type(other) is type(self) and
            bool(numpy.array_equal(self._samples,
                                   other._samples))  # type: ignore
        )

    def __repr__(self) -> str:
        return "%s{width: %d, height: %d}" \
            % (self.__class__.__name__, self.width, self.height)


class GrayImage (_Image):
    """
    Single channel 8-bit image, samples shaped ``(height, width)``.
    """
    CHANNELS = 1


class RgbImage (_Image):
    """
    Three channel 8-bit image, samples shaped ``(height, width, 3)``.
    """
    CHANNELS = 3

    @classmethod
    def from_gray(cls, img: GrayImage) -> "RgbImage":
        return cls(numpy.repeat(img.samples[:, :, None], 3, axis=2))

    def channel(self, index: int) -> GrayImage:
        return GrayImage(self._samples[:, :, index])


class Polygon:
    """
    Closed polygon over subpixel coordinates. The last vertex implicitly
    connects back to the first.
    """

    __slots__ = ("_vertices",)
    __hash__ = None  # type: ignore

    def __init__(self, vertices: npt.ArrayLike) -> None:
        """
        :param vertices: Sequence of ``(x, y)`` pairs.
        :raises ValueError: Fewer than 3 vertices, or non-finite values.
        """
        arr = numpy.array(vertices, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("Polygon vertices must be (x, y) pairs")
        if arr.shape[0] < 3:
            raise ValueError("Polygon requires at least 3 vertices, given %d"
                             % arr.shape[0])
        if not numpy.isfinite(arr).all():
            raise ValueError("Polygon vertices must be finite")
        self._vertices = _read_only(arr)

    @property
    def vertices(self) -> numpy.ndarray:
        """ Read-only ``(N, 2)`` float array of ``(x, y)`` rows. """
        return self._vertices

    def __len__(self) -> int:
        return int(self._vertices.shape[0])

    def __iter__(self) -> Iterator[Tuple[float, float]]:
        for x, y in self._vertices:
            yield float(x), float(y)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Polygon) and \
            bool(numpy.array_equal(self._vertices, other._vertices))

    def __repr__(self) -> str:
        return "%s{vertices: %d}" % (self.__class__.__name__, len(self))

    def signed_area(self) -> float:
        """
        Shoelace area in image coordinates. Since y grows downward, a
        polygon that appears counterclockwise on screen has negative area.
        """
        x = self._vertices[:, 0]
        y = self._vertices[:, 1]
        return 0.5 * float(numpy.sum(x * numpy.roll(y, -1) -
                                     numpy.roll(x, -1) * y))

    def is_counterclockwise(self) -> bool:
        """ Orientation as displayed, i.e. with y pointing down. """
        return self.signed_area() < 0

    def to_list(self) -> List[List[float]]:
        return self._vertices.tolist()


class ComponentLabeling:
    """
    Dense labeling of connected foreground regions: 0 is background and
    components are numbered ``1..count``.
    """

    __slots__ = ("_labels", "_count")

    def __init__(self, labels: npt.ArrayLike, count: int) -> None:
        """
        :raises ValueError: Labels are not a dense ``0..count`` numbering.
        """
        arr = numpy.array(labels, dtype=numpy.int64)
        if arr.ndim != 2:
            raise ValueError("Labels must be 2-dimensional")
        if arr.size and arr.min() < 0:
            raise ValueError("Labels must be non-negative")
        sizes = numpy.bincount(arr.ravel(), minlength=count + 1)
        if sizes.size != count + 1 or (count and not sizes[1:].all()):
            raise ValueError("Labels are not dense over 1..%d" % count)
        self._labels = _read_only(arr)
        self._count = int(count)

    @property
    def labels(self) -> numpy.ndarray:
        return self._labels

    @property
    def count(self) -> int:
        return self._count

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self._labels.shape[0]), int(self._labels.shape[1])

    def component(self, label: int) -> BinaryMask:
        """
        :raises KeyError: Label is not within ``1..count``.
        """
        if not 1 <= label <= self._count:
            raise KeyError(label)
        return BinaryMask.adopt(self._labels == label)

    def areas(self) -> numpy.ndarray:
        """
        :return: Pixel count per component, index ``i`` holding label
            ``i + 1``.
        """
        return numpy.bincount(self._labels.ravel(),
                              minlength=self._count + 1)[1:]


###############################################################################
# Operations

def intersect_count(a: BinaryMask, b: BinaryMask) -> int:
    """
    Pixel count of ``A ∩ B``.

    :raises DimensionMismatchError: Masks differ in size.
    """
    a.check_same_size(b)
    return int(numpy.count_nonzero(a.bits & b.bits))


def union_count(a: BinaryMask, b: BinaryMask) -> int:
    """
    Pixel count of ``A ∪ B``.

    :raises DimensionMismatchError: Masks differ in size.
    """
    a.check_same_size(b)
    return int(numpy.count_nonzero(a.bits | b.bits))


def connected_components(m: BinaryMask,
                         connectivity: int = 8) -> ComponentLabeling:
    """
    Label maximal connected foreground regions. Labels follow the raster
    scan order of each component's first pixel.

    >>> connected_components(BinaryMask([[1, 0], [0, 1]]), 8).count
    1
    >>> connected_components(BinaryMask([[1, 0], [0, 1]]), 4).count
    2
    """
    check_connectivity(connectivity)
    labels, count = ndimage.label(
        m.bits, structure=CONNECTIVITY_STRUCTURES[connectivity]
    )
    if count > 1:
        # First flat index of every label.
        flat_index = numpy.arange(labels.size).reshape(labels.shape)
        first = numpy.asarray(ndimage.minimum(
            flat_index, labels, index=numpy.arange(1, count + 1)
        ))
        if numpy.any(numpy.diff(first) < 0):
            lookup = numpy.zeros(count + 1, dtype=labels.dtype)
            lookup[numpy.argsort(first, kind="stable") + 1] = \
                numpy.arange(1, count + 1)
            labels = lookup[labels]
    return ComponentLabeling(labels, int(count))


def rasterize(p: Polygon, width: int, height: int) -> BinaryMask:
    """
    Set every pixel whose center lies inside the polygon under the even-odd
    rule. Scanline crossings use a half-open vertical span per edge, so a
    pixel center is never counted twice at a shared vertex. Centers on a top
    or left edge are set, centers on a bottom or right edge are not, e.g. the
    square from ``(0, 0)`` to ``(1, 1)`` sets only pixel ``(0, 0)``. Parts
    outside the canvas are clipped and zero-area polygons yield an empty mask.

    :raises ValueError: Non-positive canvas size.
    """
    if width <= 0 or height <= 0:
        raise ValueError("Canvas size must be positive, given %dx%d"
                         % (width, height))
    v = p.vertices
    xa, ya = v[:, 0], v[:, 1]
    nxt = numpy.roll(v, -1, axis=0)
    xb, yb = nxt[:, 0], nxt[:, 1]

    # Pixel rows y with min(ya, yb) <= y < max(ya, yb).
    lo = numpy.minimum(ya, yb)
    hi = numpy.maximum(ya, yb)
    r0 = numpy.maximum(numpy.ceil(lo), 0).astype(numpy.int64)
    r1 = numpy.minimum(numpy.ceil(hi) - 1, height - 1).astype(numpy.int64)
    n = numpy.where(ya != yb, numpy.maximum(r1 - r0 + 1, 0), 0)
    total = int(n.sum())
    bits = numpy.zeros((height, width), dtype=bool)
    if total == 0:
        return BinaryMask.adopt(bits)

    edge = numpy.repeat(numpy.arange(n.size), n)
    rows = r0[edge] + (numpy.arange(total) -
                       numpy.repeat(numpy.cumsum(n) - n, n))
    xc = xa[edge] + (xb[edge] - xa[edge]) * \
        (rows - ya[edge]) / (yb[edge] - ya[edge])

    order = numpy.lexsort((xc, rows))
    rows = rows[order]
    xc = xc[order]
    # Closed polygons cross every scanline an even number of times, so
    # consecutive crossings pair up into inside spans [start, end).
    span_rows = rows[0::2]
    x0 = numpy.ceil(xc[0::2]).astype(numpy.int64)
    x1 = numpy.ceil(xc[1::2]).astype(numpy.int64) - 1
    x0 = numpy.maximum(x0, 0)
    x1 = numpy.minimum(x1, width - 1)
    ok = x0 <= x1
    if not ok.any():
        return BinaryMask.adopt(bits)
    diff = numpy.zeros((height, width + 1), dtype=numpy.int64)
    numpy.add.at(diff, (span_rows[ok], x0[ok]), 1)
    numpy.add.at(diff, (span_rows[ok], x1[ok] + 1), -1)
    bits = numpy.cumsum(diff, axis=1)[:, :width] > 0
    return BinaryMask.adopt(bits)


# Edge directions over the pixel-corner lattice, (dx, dy) with y down.
_EAST, _SOUTH, _WEST, _NORTH = (1, 0), (0, 1), (-1, 0), (0, -1)


def _edge_sides(x: int, y: int,
                d: Tuple[int, int]) -> Tuple[Tuple[int, int],
                                             Tuple[int, int]]:
    """
    Pixels ``(row, col)`` on the left and right of the unit edge leaving
    corner ``(x, y)`` in direction ``d``, as seen on screen.
    """
    if d == _EAST:
        return (y - 1, x), (y, x)
    if d == _WEST:
        return (y, x - 1), (y - 1, x - 1)
    if d == _SOUTH:
        return (y, x), (y, x - 1)
    return (y - 1, x - 1), (y - 1, x)


def _trace_outer_boundary(fg: numpy.ndarray) -> List[Tuple[int, int]]:
    """
    Moore-style boundary following over pixel corners. ``fg`` must be padded
    with at least one background pixel on every side. The foreground stays
    on the left of travel, giving a counterclockwise loop on screen, and
    turns are tried right-first so diagonal neighbors stay joined
    (8-connectivity).

    :return: Corner lattice vertices where the direction changes.
    """
    r, c = numpy.unravel_index(int(numpy.flatnonzero(fg)[0]), fg.shape)
    # Top edge of the first pixel, walked right to left.
    start = (int(c) + 1, int(r), _WEST)
    x, y, d = start
    vertices: List[Tuple[int, int]] = []
    while True:
        x, y = x + d[0], y + d[1]
        right = (-d[1], d[0])
        left = (d[1], -d[0])
        for cand in (right, d, left):
            (lr, lc), (rr, rc) = _edge_sides(x, y, cand)
            if fg[lr, lc] and not fg[rr, rc]:
                break
        else:  # pragma: no cover
            raise RuntimeError("Boundary trace lost the contour at (%d, %d)"
                               % (x, y))
        if cand != d:
            vertices.append((x, y))
        d = cand
        if (x, y, d) == start:
            break
    return vertices


def extract_contours(m: BinaryMask) -> List[Polygon]:
    """
    One outer contour per 8-connected component, in component label order.
    Vertices lie on pixel corners, so rasterizing a contour gives back its
    component with any holes filled. Contours run counterclockwise as
    displayed.
    """
    labeling = connected_components(m, 8)
    polygons: List[Polygon] = []
    for label, sl in enumerate(ndimage.find_objects(labeling.labels),
                               start=1):
        comp = numpy.pad(labeling.labels[sl] == label, 1)
        # Padded lattice corner (x, y) sits at center coordinates
        # (x + col0 - 1.5, y + row0 - 1.5).
        ox = sl[1].start - 1.5
        oy = sl[0].start - 1.5
        corners = _trace_outer_boundary(comp)
        polygons.append(Polygon([(cx + ox, cy + oy) for cx, cy in corners]))
    LOG.debug("Extracted %d contour(s)", len(polygons))
    return polygons
