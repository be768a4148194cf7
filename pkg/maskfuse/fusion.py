"""
Repair fragmented instance predictions with a semantic pre-segmentation.

Instances of the same class are merged when they overlap strongly enough
(IoU), when one is largely contained in the other, or when both sit on the
same connected region of the semantic mask. Merge links are closed
transitively and re-evaluated on the merged masks until nothing changes, so
fusing an already fused set is a no-op.
"""
from dataclasses import dataclass, field
import logging
from typing import (
    Any, Dict, FrozenSet, Iterator, List, NamedTuple, Optional, Sequence,
    Set, Tuple
)

import numpy
from scipy import ndimage
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial import ConvexHull

from smqtk_core import Configurable

from maskfuse.exceptions import DimensionMismatchError, InvalidConfigError
from maskfuse.raster import (
    BBox, BinaryMask, ComponentLabeling, Polygon, check_connectivity,
    connected_components, extract_contours, rasterize
)
from maskfuse.utils import SimpleTimer


LOG = logging.getLogger(__name__)

REASON_IOU = "iou"
REASON_CONTAINMENT = "containment"
REASON_SHARED_REGION = "shared_region"
#: Merge reasons, highest priority first.
REASONS = (REASON_IOU, REASON_CONTAINMENT, REASON_SHARED_REGION)

ORPHAN_POLICIES = ("keep", "drop")
SEMANTIC_FILLS = ("union_only", "fill_bridge")

#: Dilation applied to a merge group's hull before it claims semantic
#: pixels in ``fill_bridge`` mode.
BRIDGE_DILATION = 2


@dataclass(frozen=True)
class Instance:
    """
    One predicted object.

    :param id: Identifier, unique within its set.
    :param class_id: Class of the object.
    :param mask: Nonempty object mask.
    :param score: Optional confidence in ``[0, 1]``.
    """
    id: int
    class_id: int
    mask: BinaryMask
    score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.mask.is_empty():
            raise ValueError("Instance %d has an empty mask" % self.id)
        if self.score is not None and not 0 <= self.score <= 1:
            raise ValueError("Instance %d score %r outside [0, 1]"
                             % (self.id, self.score))

    @classmethod
    def from_polygon(cls, id: int, class_id: int, polygon: Polygon,
                     width: int, height: int,
                     score: Optional[float] = None) -> "Instance":
        """
        :raises ValueError: Polygon covers no pixel center of the canvas.
        """
        return cls(id, class_id, rasterize(polygon, width, height), score)


class InstanceSet:
    """
    Instances sharing one canvas, kept in the order given.
    """

    def __init__(self, width: int, height: int,
                 instances: Sequence[Instance] = ()) -> None:
        """
        :raises DimensionMismatchError: An instance mask has another size.
        :raises ValueError: Duplicate ids or non-positive canvas size.
        """
        if width <= 0 or height <= 0:
            raise ValueError("Canvas size must be positive, given %dx%d"
                             % (width, height))
        seen: Set[int] = set()
        for inst in instances:
            if inst.mask.shape != (height, width):
                raise DimensionMismatchError((height, width),
                                             inst.mask.shape)
            if inst.id in seen:
                raise ValueError("Duplicate instance id %d" % inst.id)
            seen.add(inst.id)
        self._width = int(width)
        self._height = int(height)
        self._instances = tuple(instances)

    @property
    def width(self) -> int:
        return self._width

    @property
    def height(self) -> int:
        return self._height

    @property
    def shape(self) -> Tuple[int, int]:
        return self._height, self._width

    @property
    def instances(self) -> Tuple[Instance, ...]:
        return self._instances

    @property
    def ids(self) -> List[int]:
        return [i.id for i in self._instances]

    def __len__(self) -> int:
        return len(self._instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self._instances)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, InstanceSet) and
            self.shape == other.shape and
            self._instances == other._instances
        )

    def __repr__(self) -> str:
        return "%s{width: %d, height: %d, instances: %d}" \
            % (self.__class__.__name__, self._width, self._height,
               len(self._instances))

    def get(self, instance_id: int) -> Instance:
        """
        :raises KeyError: No instance with this id.
        """
        for inst in self._instances:
            if inst.id == instance_id:
                return inst
        raise KeyError(instance_id)

    def union_mask(self) -> BinaryMask:
        bits = numpy.zeros(self.shape, dtype=bool)
        for inst in self._instances:
            bits |= inst.mask.bits
        return BinaryMask.adopt(bits)

    def to_label_map(self) -> numpy.ndarray:
        """
        Paint class ids into a map, 0 for background. Instances are painted
        by ascending id, so the higher id wins where masks overlap.
        """
        labels = numpy.zeros(self.shape, dtype=numpy.int64)
        for inst in sorted(self._instances, key=lambda i: i.id):
            labels[inst.mask.bits] = inst.class_id
        return labels


@dataclass(frozen=True)
class FusionConfig (Configurable):
    """
    :param iou_threshold: Minimum IoU linking two instances, or an instance
        to a semantic region.
    :param containment_threshold: Minimum fraction of one mask lying inside
        the other (or inside a semantic region) to link them.
    :param connectivity: Pixel connectivity of semantic regions, 4 or 8.
    :param orphan_policy: ``keep`` or ``drop`` instances that touch no
        semantic foreground.
    :param semantic_fill: ``union_only`` outputs the union of the merged
        masks; ``fill_bridge`` additionally claims the semantic pixels
        between the members of a merge group.
    """
    iou_threshold: float = 0.05
    containment_threshold: float = 0.8
    connectivity: int = 8
    orphan_policy: str = "keep"
    semantic_fill: str = "union_only"

    def __post_init__(self) -> None:
        for name in ("iou_threshold", "containment_threshold"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0 <= v <= 1:
                raise InvalidConfigError("%s must lie within [0, 1], "
                                         "given %r" % (name, v))
        try:
            check_connectivity(self.connectivity)
        except ValueError as ex:
            raise InvalidConfigError(str(ex))
        if self.orphan_policy not in ORPHAN_POLICIES:
            raise InvalidConfigError("Unknown orphan policy %r, expected "
                                     "one of %s" % (self.orphan_policy,
                                                    ORPHAN_POLICIES))
        if self.semantic_fill not in SEMANTIC_FILLS:
            raise InvalidConfigError("Unknown semantic fill %r, expected "
                                     "one of %s" % (self.semantic_fill,
                                                    SEMANTIC_FILLS))

    def get_config(self) -> Dict[str, Any]:
        return {
            "iou_threshold": self.iou_threshold,
            "containment_threshold": self.containment_threshold,
            "connectivity": self.connectivity,
            "orphan_policy": self.orphan_policy,
            "semantic_fill": self.semantic_fill,
        }


class MergeDecision (NamedTuple):
    merge: bool
    reason: Optional[str] = None


KEEP = MergeDecision(False)


class MergeRecord (NamedTuple):
    """
    One output instance assembled from several inputs.
    """
    survivor: int
    absorbed: List[int]
    reason: str
    reasons: List[str]


@dataclass
class FusionReport:
    """
    Audit trail of a :func:`fuse` call. Every input id appears once as a
    survivor, as absorbed into a merge, or as an orphan.
    """
    survivors: List[int]
    merges: List[MergeRecord]
    orphans: List[int]
    input_count: int
    output_count: int
    config: FusionConfig
    #: Output id to the input ids it was built from.
    members: Dict[int, List[int]] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        return {
            "config": self.config.get_config(),
            "input_count": self.input_count,
            "output_count": self.output_count,
            "survivors": list(self.survivors),
            "orphans": list(self.orphans),
            "merges": [
                {"survivor": m.survivor, "absorbed": list(m.absorbed),
                 "reason": m.reason, "reasons": list(m.reasons)}
                for m in self.merges
            ],
            "outputs": [
                {"id": k, "members": list(v)}
                for k, v in sorted(self.members.items())
            ],
        }


###############################################################################
# Pairwise and region tests
#
# Work happens on bounding box windows; full-canvas passes per pair would
# dominate runtime on large scenes.

def _bbox_overlap(a: Optional[BBox], b: Optional[BBox]) -> Optional[BBox]:
    if a is None or b is None:
        return None
    x0, y0 = max(a[0], b[0]), max(a[1], b[1])
    x1, y1 = min(a[2], b[2]), min(a[3], b[3])
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1


def _window(bits: numpy.ndarray, box: BBox) -> numpy.ndarray:
    return bits[box[1]:box[3], box[0]:box[2]]


class _Shape (NamedTuple):
    """ Cached mask facts used by pair tests. """
    bits: numpy.ndarray
    bbox: Optional[BBox]
    area: int


def _shape_of(m: BinaryMask) -> _Shape:
    return _Shape(m.bits, m.bbox(), m.area)


def _overlap_reason(a: _Shape, b: _Shape,
                    cfg: FusionConfig) -> Optional[str]:
    box = _bbox_overlap(a.bbox, b.bbox)
    if box is None:
        return None
    inter = int(numpy.count_nonzero(_window(a.bits, box) &
                                    _window(b.bits, box)))
    if inter == 0:
        return None
    if inter / (a.area + b.area - inter) >= cfg.iou_threshold:
        return REASON_IOU
    if inter / b.area >= cfg.containment_threshold or \
            inter / a.area >= cfg.containment_threshold:
        return REASON_CONTAINMENT
    return None


def _decide(class_a: int, class_b: int, a: _Shape, b: _Shape,
            cfg: FusionConfig, a_regions: FrozenSet[int],
            b_regions: FrozenSet[int]) -> MergeDecision:
    if class_a != class_b:
        return KEEP
    reason = _overlap_reason(a, b, cfg)
    if reason is not None:
        return MergeDecision(True, reason)
    if a_regions & b_regions:
        return MergeDecision(True, REASON_SHARED_REGION)
    return KEEP


def merge_pair_decision(
    a: Instance,
    b: Instance,
    cfg: FusionConfig,
    a_regions: FrozenSet[int] = frozenset(),
    b_regions: FrozenSet[int] = frozenset(),
) -> MergeDecision:
    """
    Decide whether two instances belong to the same object.

    Checks run in order: IoU, containment of either mask in the other, then
    a shared semantic region. Overlap based links need at least one common
    pixel. Instances of different classes are never merged.

    :param a_regions: Semantic region labels ``a`` is assigned to.
    :param b_regions: Semantic region labels ``b`` is assigned to.

    :raises DimensionMismatchError: Masks differ in size.
    """
    a.mask.check_same_size(b.mask)
    return _decide(a.class_id, b.class_id, _shape_of(a.mask),
                   _shape_of(b.mask), cfg, frozenset(a_regions),
                   frozenset(b_regions))


def _regions_of(shape: _Shape, labeling: ComponentLabeling,
                comp_areas: numpy.ndarray,
                cfg: FusionConfig) -> FrozenSet[int]:
    if shape.bbox is None or labeling.count == 0:
        return frozenset()
    under = _window(labeling.labels, shape.bbox)[_window(shape.bits,
                                                         shape.bbox)]
    counts = numpy.bincount(under, minlength=labeling.count + 1)[1:]
    hit = numpy.flatnonzero(counts)
    regions = set()
    for idx in hit:
        inter = int(counts[idx])
        contained = inter / shape.area
        overlap = inter / (shape.area + int(comp_areas[idx]) - inter)
        if contained >= cfg.containment_threshold or \
                overlap >= cfg.iou_threshold:
            regions.add(int(idx) + 1)
    return frozenset(regions)


def assign_to_regions(instances: InstanceSet, labeling: ComponentLabeling,
                      cfg: FusionConfig) -> Dict[int, FrozenSet[int]]:
    """
    Assign each instance to every semantic region that contains at least
    ``containment_threshold`` of it, or that it overlaps with at least
    ``iou_threshold`` IoU.

    :return: Instance id to the set of region labels.
    :raises DimensionMismatchError: Labeling has another canvas size.
    """
    if labeling.shape != instances.shape:
        raise DimensionMismatchError(instances.shape, labeling.shape)
    comp_areas = labeling.areas()
    return {
        inst.id: _regions_of(_shape_of(inst.mask), labeling, comp_areas, cfg)
        for inst in instances
    }


###############################################################################
# Fusion

class _Group:
    """ Instances merged so far, with their combined mask. """

    def __init__(self, members: List[Instance], bits: numpy.ndarray,
                 reasons: Set[str]) -> None:
        self.members = sorted(members, key=lambda i: i.id)
        self.class_id = self.members[0].class_id
        bits.setflags(write=False)
        self.shape = _Shape(bits, BinaryMask.adopt(bits).bbox(),
                            int(numpy.count_nonzero(bits)))
        self.reasons = reasons

    @property
    def min_id(self) -> int:
        return self.members[0].id


def _bridge(bits: numpy.ndarray, regions: FrozenSet[int],
            labeling: ComponentLabeling) -> numpy.ndarray:
    """
    Claim the pixels of the assigned semantic regions that fall inside the
    group's convex hull, dilated by :data:`BRIDGE_DILATION` pixels.
    """
    if not regions:
        return bits
    mask = BinaryMask.adopt(bits)
    x0, y0, x1, y1 = mask.bbox()  # type: ignore
    h, w = bits.shape
    pad = BRIDGE_DILATION + 1
    x0, y0 = max(x0 - pad, 0), max(y0 - pad, 0)
    x1, y1 = min(x1 + pad, w), min(y1 + pad, h)
    box = (x0, y0, x1, y1)
    points = numpy.concatenate([p.vertices for p in extract_contours(
        BinaryMask.adopt(_window(bits, box))
    )])
    hull = ConvexHull(points)
    hull_mask = rasterize(Polygon(points[hull.vertices]), x1 - x0, y1 - y0)
    relevance = ndimage.binary_dilation(
        hull_mask.bits, structure=numpy.ones((3, 3), dtype=bool),
        iterations=BRIDGE_DILATION
    )
    semantic = numpy.isin(_window(labeling.labels, box), sorted(regions))
    out = bits.copy()
    _window(out, box)[...] |= relevance & semantic
    return out


def _link_groups(groups: List[_Group], regions: List[FrozenSet[int]],
                 cfg: FusionConfig) -> List[Tuple[int, int, str]]:
    links = []
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            d = _decide(groups[i].class_id, groups[j].class_id,
                        groups[i].shape, groups[j].shape, cfg,
                        regions[i], regions[j])
            if d.merge:
                assert d.reason is not None
                links.append((i, j, d.reason))
    return links


def _priority_reason(reasons: Set[str]) -> str:
    return next(r for r in REASONS if r in reasons)


def fuse(instances: InstanceSet, semantic: BinaryMask,
         cfg: FusionConfig = FusionConfig()) -> Tuple[InstanceSet,
                                                      FusionReport]:
    """
    Merge instances that belong to the same object.

    Output instances are numbered ``1..n`` in order of their smallest input
    id. An output keeps its class and takes the highest member score.

    :param instances: Predicted instances.
    :param semantic: Foreground mask of the semantic segmentation, on the
        same canvas.
    :param cfg: Thresholds and policies.

    :raises DimensionMismatchError: Semantic mask has another canvas size.
    :return: Fused instances and the report of what was merged.
    """
    if semantic.shape != instances.shape:
        raise DimensionMismatchError(instances.shape, semantic.shape)
    with SimpleTimer("Fusing %d instance(s)", LOG.debug, len(instances)):
        labeling = connected_components(semantic, cfg.connectivity)
        if labeling.count == 0:
            LOG.warning("Semantic mask has no foreground; merging on "
                        "instance overlap only")
        comp_areas = labeling.areas()

        groups = [_Group([inst], numpy.array(inst.mask.bits), set())
                  for inst in sorted(instances, key=lambda i: i.id)]
        rounds = 0
        while True:
            regions = [_regions_of(g.shape, labeling, comp_areas, cfg)
                       for g in groups]
            links = _link_groups(groups, regions, cfg)
            if not links:
                break
            rounds += 1
            dsu = DisjointSet(range(len(groups)))
            link_reasons: Dict[int, Set[str]] = {}
            for i, j, reason in links:
                dsu.merge(i, j)
                link_reasons.setdefault(i, set()).add(reason)
            merged = []
            for idx in dsu.subsets():
                members: List[Instance] = []
                reasons: Set[str] = set()
                bits = numpy.zeros(instances.shape, dtype=bool)
                group_regions: Set[int] = set()
                for k in sorted(idx):
                    members.extend(groups[k].members)
                    reasons |= groups[k].reasons
                    reasons |= link_reasons.get(k, set())
                    bits |= groups[k].shape.bits
                    group_regions |= regions[k]
                if len(idx) > 1 and cfg.semantic_fill == "fill_bridge":
                    bits = _bridge(bits, frozenset(group_regions), labeling)
                merged.append(_Group(members, bits, reasons))
            groups = sorted(merged, key=lambda g: g.min_id)
            LOG.debug("Merge round %d: %d link(s), %d group(s) remain",
                      rounds, len(links), len(groups))

        fg = semantic.bits
        survivors: List[int] = []
        orphans: List[int] = []
        merges: List[MergeRecord] = []
        members_out: Dict[int, List[int]] = {}
        out: List[Instance] = []
        for g in groups:
            ids = [m.id for m in g.members]
            is_orphan = labeling.count > 0 and g.shape.bbox is not None and \
                not _window(fg, g.shape.bbox)[_window(g.shape.bits,
                                                      g.shape.bbox)].any()
            if is_orphan:
                orphans.extend(ids)
                if cfg.orphan_policy == "drop":
                    continue
            else:
                survivors.append(ids[0])
                if len(ids) > 1:
                    merges.append(MergeRecord(
                        ids[0], ids[1:], _priority_reason(g.reasons),
                        [r for r in REASONS if r in g.reasons]
                    ))
            scores = [m.score for m in g.members if m.score is not None]
            new_id = len(out) + 1
            members_out[new_id] = ids
            out.append(Instance(new_id, g.class_id,
                                BinaryMask.adopt(g.shape.bits),
                                max(scores) if scores else None))

    if orphans:
        LOG.info("%d instance(s) touch no semantic region (%s)",
                 len(orphans), cfg.orphan_policy)
    LOG.info("Fused %d instance(s) into %d", len(instances), len(out))
    report = FusionReport(survivors, merges, orphans, len(instances),
                          len(out), cfg, members_out)
    return InstanceSet(instances.width, instances.height, out), report
