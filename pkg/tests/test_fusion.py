import logging
import time
from typing import List, Optional

import numpy
import pytest

from smqtk_core.configuration import configuration_test_helper

from maskfuse.exceptions import DimensionMismatchError, InvalidConfigError
from maskfuse.fusion import (
    FusionConfig, FusionReport, Instance, InstanceSet, KEEP, MergeRecord,
    assign_to_regions, fuse, merge_pair_decision
)
from maskfuse.metrics import iou, matched_instance_iou, mean_iou
from maskfuse.raster import BinaryMask, Polygon, connected_components
from maskfuse.synth import generate, random_scene_spec


def rect(w: int, h: int, x0: int, y0: int, x1: int, y1: int) -> BinaryMask:
    """ Mask with pixels ``[x0, x1) x [y0, y1)`` set. """
    bits = numpy.zeros((h, w), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


def inst(id: int, mask: BinaryMask, class_id: int = 1,
         score: Optional[float] = None) -> Instance:
    return Instance(id, class_id, mask, score)


def all_ids(report: FusionReport) -> List[int]:
    ids = list(report.survivors) + list(report.orphans)
    for m in report.merges:
        ids.extend(m.absorbed)
    return sorted(ids)


class TestInstance:

    def test_empty_mask(self) -> None:
        with pytest.raises(ValueError):
            inst(1, BinaryMask.empty(3, 3))

    def test_score_range(self) -> None:
        m = rect(3, 3, 0, 0, 1, 1)
        inst(1, m, score=0.0)
        inst(1, m, score=1.0)
        with pytest.raises(ValueError):
            inst(1, m, score=1.5)

    def test_from_polygon(self) -> None:
        i = Instance.from_polygon(
            4, 2, Polygon([(-0.5, -0.5), (1.5, -0.5), (1.5, 0.5), (-0.5, 0.5)]),
            3, 2, 0.5
        )
        assert i.mask == rect(3, 2, 0, 0, 2, 1)
        assert (i.id, i.class_id, i.score) == (4, 2, 0.5)


class TestInstanceSet:

    def test_canvas_checks(self) -> None:
        with pytest.raises(DimensionMismatchError):
            InstanceSet(4, 4, [inst(1, rect(3, 4, 0, 0, 1, 1))])
        with pytest.raises(ValueError):
            InstanceSet(0, 4)

    def test_duplicate_ids(self) -> None:
        m = rect(4, 4, 0, 0, 1, 1)
        with pytest.raises(ValueError):
            InstanceSet(4, 4, [inst(1, m), inst(1, m)])

    def test_access(self) -> None:
        a = inst(7, rect(4, 2, 0, 0, 2, 1))
        b = inst(3, rect(4, 2, 1, 0, 4, 2), class_id=5)
        s = InstanceSet(4, 2, [a, b])
        assert len(s) == 2
        assert s.ids == [7, 3]
        assert list(s) == [a, b]
        assert s.get(3) is b
        with pytest.raises(KeyError):
            s.get(1)
        assert s.shape == (2, 4)
        assert s.union_mask().area == 2 + 6 - 1
        assert s == InstanceSet(4, 2, [a, b])
        assert s != InstanceSet(4, 2, [b, a])

    def test_label_map_higher_id_wins(self) -> None:
        a = inst(7, rect(4, 1, 0, 0, 3, 1), class_id=2)
        b = inst(3, rect(4, 1, 1, 0, 4, 1), class_id=5)
        labels = InstanceSet(4, 1, [a, b]).to_label_map()
        numpy.testing.assert_array_equal(labels, [[2, 2, 2, 5]])


class TestFusionConfig:

    def test_configuration(self) -> None:
        inst_ = FusionConfig(iou_threshold=0.3, containment_threshold=0.6,
                             connectivity=4, orphan_policy="drop",
                             semantic_fill="fill_bridge")
        for i in configuration_test_helper(inst_):
            assert i == inst_

    def test_defaults(self) -> None:
        assert FusionConfig.get_default_config() == {
            "iou_threshold": 0.05,
            "containment_threshold": 0.8,
            "connectivity": 8,
            "orphan_policy": "keep",
            "semantic_fill": "union_only",
        }

    @pytest.mark.parametrize("kwargs", [
        {"iou_threshold": -0.1},
        {"iou_threshold": 1.1},
        {"containment_threshold": 2},
        {"connectivity": 6},
        {"orphan_policy": "ignore"},
        {"semantic_fill": "everything"},
    ])
    def test_invalid(self, kwargs: dict) -> None:
        with pytest.raises(InvalidConfigError):
            FusionConfig(**kwargs)


class TestMergePairDecision:

    CFG = FusionConfig()

    def test_iou(self) -> None:
        a = inst(1, rect(10, 2, 0, 0, 6, 2))
        b = inst(2, rect(10, 2, 3, 0, 9, 2))
        d = merge_pair_decision(a, b, self.CFG)
        assert d.merge
        assert d.reason == "iou"

    def test_containment(self) -> None:
        big = inst(1, rect(12, 12, 0, 0, 10, 10))
        small = inst(2, rect(12, 12, 2, 2, 4, 4))
        # IoU 4/100 is below the threshold.
        assert iou(big.mask, small.mask) < self.CFG.iou_threshold
        assert merge_pair_decision(big, small, self.CFG).reason == \
            "containment"
        assert merge_pair_decision(small, big, self.CFG).reason == \
            "containment"

    def test_shared_region(self) -> None:
        a = inst(1, rect(10, 1, 0, 0, 3, 1))
        b = inst(2, rect(10, 1, 6, 0, 9, 1))
        assert merge_pair_decision(a, b, self.CFG) == KEEP
        d = merge_pair_decision(a, b, self.CFG, frozenset({1}),
                                frozenset({1, 2}))
        assert d.merge and d.reason == "shared_region"
        assert not merge_pair_decision(a, b, self.CFG, frozenset({1}),
                                       frozenset({2})).merge

    def test_touching_not_overlapping(self) -> None:
        # Even a zero threshold needs a common pixel.
        cfg = FusionConfig(iou_threshold=0.0, containment_threshold=0.0)
        a = inst(1, rect(4, 1, 0, 0, 2, 1))
        b = inst(2, rect(4, 1, 2, 0, 4, 1))
        assert merge_pair_decision(a, b, cfg) == KEEP

    def test_class_mismatch(self) -> None:
        a = inst(1, rect(10, 2, 0, 0, 6, 2))
        b = inst(2, rect(10, 2, 0, 0, 6, 2), class_id=2)
        assert merge_pair_decision(a, b, self.CFG, frozenset({1}),
                                   frozenset({1})) == KEEP

    def test_size_mismatch(self) -> None:
        with pytest.raises(DimensionMismatchError):
            merge_pair_decision(inst(1, rect(3, 3, 0, 0, 1, 1)),
                                inst(2, rect(4, 3, 0, 0, 1, 1)), self.CFG)


class TestAssignToRegions:

    def test_straddling_instance(self) -> None:
        sem = numpy.zeros((4, 30), dtype=bool)
        sem[:, 0:10] = True
        sem[:, 11:26] = True
        labeling = connected_components(BinaryMask(sem))
        assert labeling.count == 2
        x = inst(1, rect(30, 4, 4, 0, 14, 4))
        outside = inst(2, rect(30, 4, 27, 0, 30, 4))
        s = InstanceSet(30, 4, [x, outside])

        cfg = FusionConfig(iou_threshold=0.9, containment_threshold=0.5)
        assert assign_to_regions(s, labeling, cfg) == {1: frozenset({1}),
                                                       2: frozenset()}
        # A loose containment threshold assigns it to both sides.
        cfg = FusionConfig(iou_threshold=0.9, containment_threshold=0.3)
        assert assign_to_regions(s, labeling, cfg)[1] == frozenset({1, 2})

    def test_iou_assignment(self) -> None:
        # Only a third of the instance lies in the region, but the overlap
        # covers the region almost completely.
        labeling = connected_components(rect(9, 1, 0, 0, 3, 1))
        s = InstanceSet(9, 1, [inst(1, rect(9, 1, 0, 0, 9, 1))])
        cfg = FusionConfig(iou_threshold=0.3, containment_threshold=0.9)
        assert assign_to_regions(s, labeling, cfg) == {1: frozenset({1})}

    def test_canvas_mismatch(self) -> None:
        labeling = connected_components(BinaryMask.empty(3, 3))
        s = InstanceSet(4, 3, [inst(1, rect(4, 3, 0, 0, 1, 1))])
        with pytest.raises(DimensionMismatchError):
            assign_to_regions(s, labeling, FusionConfig())


class TestFuse:

    def _stripe_case(self) -> tuple:
        w, h = 20, 5
        semantic = rect(w, h, 1, 1, 19, 4)
        s = InstanceSet(w, h, [
            inst(1, rect(w, h, 1, 1, 8, 4), score=0.3),
            inst(2, rect(w, h, 11, 1, 19, 4), score=0.9),
        ])
        return s, semantic

    def test_shared_region_union(self) -> None:
        s, semantic = self._stripe_case()
        out, report = fuse(s, semantic)
        assert len(out) == 1
        (merged,) = out
        assert merged.id == 1
        assert merged.mask == s.union_mask()
        assert merged.score == 0.9
        assert report.survivors == [1]
        assert report.orphans == []
        assert report.merges == [MergeRecord(1, [2], "shared_region",
                                             ["shared_region"])]
        assert report.members == {1: [1, 2]}
        assert (report.input_count, report.output_count) == (2, 1)

    def test_fill_bridge(self) -> None:
        s, semantic = self._stripe_case()
        out, report = fuse(s, semantic,
                           FusionConfig(semantic_fill="fill_bridge"))
        (merged,) = out
        # Gap pixels between the fragments are claimed from the semantic
        # region, and nothing outside of it.
        assert merged.mask == semantic
        assert report.merges[0].reason == "shared_region"

    def test_fill_bridge_stays_near_group(self) -> None:
        # A long region of which the group covers only the left part.
        w, h = 60, 3
        semantic = rect(w, h, 0, 0, 60, 3)
        s = InstanceSet(w, h, [inst(1, rect(w, h, 0, 0, 5, 3)),
                               inst(2, rect(w, h, 10, 0, 15, 3))])
        (merged,), _ = fuse(s, semantic,
                            FusionConfig(semantic_fill="fill_bridge"))
        assert merged.mask.bits[:, 0:15].all()
        assert not merged.mask.bits[:, 20:].any()

    def test_no_merge_across_regions(self) -> None:
        w, h = 20, 5
        semantic = rect(w, h, 0, 0, 8, 5).union(rect(w, h, 12, 0, 20, 5))
        s = InstanceSet(w, h, [inst(1, rect(w, h, 0, 0, 8, 5)),
                               inst(2, rect(w, h, 12, 0, 20, 5))])
        out, report = fuse(s, semantic)
        assert out == InstanceSet(w, h, [inst(1, s.get(1).mask),
                                         inst(2, s.get(2).mask)])
        assert report.merges == []
        assert report.survivors == [1, 2]

    def test_iou_merge_reason(self) -> None:
        w, h = 10, 2
        s = InstanceSet(w, h, [inst(1, rect(w, h, 0, 0, 6, 2)),
                               inst(2, rect(w, h, 3, 0, 9, 2))])
        out, report = fuse(s, BinaryMask.full(w, h))
        assert len(out) == 1
        assert report.merges[0].reason == "iou"
        assert report.merges[0].reasons == ["iou"]

    def test_containment_without_semantic(self, caplog: pytest.LogCaptureFixture) -> None:
        w = h = 12
        big = rect(w, h, 0, 0, 10, 10)
        s = InstanceSet(w, h, [inst(2, rect(w, h, 2, 2, 4, 4)),
                               inst(5, big)])
        with caplog.at_level(logging.WARNING, logger="maskfuse.fusion"):
            out, report = fuse(s, BinaryMask.empty(w, h))
        assert "no foreground" in caplog.text
        assert out == InstanceSet(w, h, [inst(1, big)])
        assert report.merges == [MergeRecord(2, [5], "containment",
                                             ["containment"])]
        # Without semantic foreground nothing is an orphan.
        assert report.orphans == []

    def test_class_separation(self) -> None:
        w, h = 10, 2
        s = InstanceSet(w, h, [inst(1, rect(w, h, 0, 0, 6, 2)),
                               inst(2, rect(w, h, 3, 0, 9, 2), class_id=2)])
        out, report = fuse(s, BinaryMask.full(w, h))
        assert [i.class_id for i in out] == [1, 2]
        assert report.merges == []

    def test_transitive(self) -> None:
        w, h = 10, 1
        s = InstanceSet(w, h, [inst(1, rect(w, h, 0, 0, 4, 1)),
                               inst(2, rect(w, h, 3, 0, 7, 1)),
                               inst(3, rect(w, h, 6, 0, 10, 1))])
        out, report = fuse(s, BinaryMask.empty(w, h))
        assert out == InstanceSet(w, h, [inst(1, BinaryMask.full(w, h))])
        assert report.merges == [MergeRecord(1, [2, 3], "iou", ["iou"])]

    def test_merge_reasons_accumulate(self) -> None:
        # 1 and 2 overlap, 3 only shares the region.
        w, h = 30, 2
        semantic = rect(w, h, 0, 0, 30, 2)
        s = InstanceSet(w, h, [inst(1, rect(w, h, 0, 0, 6, 2)),
                               inst(2, rect(w, h, 4, 0, 10, 2)),
                               inst(3, rect(w, h, 20, 0, 26, 2))])
        _, report = fuse(s, semantic)
        (m,) = report.merges
        assert m.survivor == 1 and m.absorbed == [2, 3]
        assert m.reason == "iou"
        assert m.reasons == ["iou", "shared_region"]

    def test_straddle_assignment(self) -> None:
        w, h = 30, 4
        semantic = rect(w, h, 0, 0, 10, 4).union(rect(w, h, 11, 0, 26, 4))
        s = InstanceSet(w, h, [
            inst(1, rect(w, h, 4, 0, 14, 4)),    # 60% left, 30% right
            inst(2, rect(w, h, 16, 0, 25, 4)),   # right only
            inst(3, rect(w, h, 0, 0, 3, 4)),     # left only
        ])
        cfg = FusionConfig(iou_threshold=0.9, containment_threshold=0.5)
        out, report = fuse(s, semantic, cfg)
        assert report.members == {1: [1, 3], 2: [2]}
        assert out.get(1).mask == s.get(1).mask.union(s.get(3).mask)

    @pytest.mark.parametrize("policy", ["keep", "drop"])
    def test_orphans(self, policy: str) -> None:
        w, h = 20, 4
        semantic = rect(w, h, 0, 0, 10, 4)
        s = InstanceSet(w, h, [inst(1, rect(w, h, 0, 0, 4, 4)),
                               inst(2, rect(w, h, 6, 0, 10, 4)),
                               inst(3, rect(w, h, 14, 0, 18, 4), score=0.2)])
        out, report = fuse(s, semantic, FusionConfig(orphan_policy=policy))
        assert report.orphans == [3]
        assert report.survivors == [1]
        if policy == "keep":
            assert len(out) == 2
            assert out.get(2).mask == s.get(3).mask
            assert out.get(2).score == 0.2
            assert report.members == {1: [1, 2], 2: [3]}
        else:
            assert len(out) == 1
            assert report.members == {1: [1, 2]}
        assert report.output_count == len(out)
        assert all_ids(report) == [1, 2, 3]

    def test_dimension_mismatch(self) -> None:
        s, _ = self._stripe_case()
        with pytest.raises(DimensionMismatchError):
            fuse(s, BinaryMask.empty(5, 20))

    def test_empty_input(self) -> None:
        out, report = fuse(InstanceSet(5, 5), BinaryMask.full(5, 5))
        assert len(out) == 0
        assert report.to_json()["outputs"] == []

    def test_report_json(self) -> None:
        s, semantic = self._stripe_case()
        _, report = fuse(s, semantic)
        doc = report.to_json()
        assert doc["config"] == FusionConfig().get_config()
        assert doc["merges"] == [{"survivor": 1, "absorbed": [2],
                                  "reason": "shared_region",
                                  "reasons": ["shared_region"]}]
        assert doc["outputs"] == [{"id": 1, "members": [1, 2]}]
        assert (doc["input_count"], doc["output_count"]) == (2, 1)


class TestFuseProperties:
    """
    Behavior over generated scenes.
    """

    SEEDS = (0, 1, 2, 3, 4, 5)

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("fill", ["union_only", "fill_bridge"])
    def test_restores_stripes(self, seed: int, fill: str) -> None:
        scene = generate(random_scene_spec(seed, 96, 96))
        out, report = fuse(scene.fragmented, scene.semantic,
                           FusionConfig(semantic_fill=fill))
        assert len(out) == len(scene.ground_truth)
        assert report.orphans == []
        truth = [i.mask for i in scene.ground_truth]
        before = matched_instance_iou([i.mask for i in scene.fragmented],
                                      truth)
        after = matched_instance_iou([i.mask for i in out], truth)
        assert after >= before
        if fill == "fill_bridge":
            assert after >= 0.95
        # Every fragment ends up with the stripe it was cut from.
        for new_id, members in report.members.items():
            assert len({scene.owners[m] for m in members}) == 1

    @pytest.mark.parametrize("seed", SEEDS)
    def test_idempotent(self, seed: int) -> None:
        scene = generate(random_scene_spec(seed, 96, 96, noise_blobs=3))
        cfg = FusionConfig(semantic_fill="fill_bridge")
        once, _ = fuse(scene.fragmented, scene.semantic, cfg)
        twice, report = fuse(once, scene.semantic, cfg)
        assert twice == once
        assert report.merges == []

    @pytest.mark.parametrize("seed", SEEDS)
    def test_input_order_invariant(self, seed: int) -> None:
        scene = generate(random_scene_spec(seed, 96, 96, noise_blobs=2))
        frag = scene.fragmented
        rng = numpy.random.default_rng(seed)
        shuffled = InstanceSet(frag.width, frag.height,
                               [frag.instances[i]
                                for i in rng.permutation(len(frag))])
        a, ra = fuse(frag, scene.semantic)
        b, rb = fuse(shuffled, scene.semantic)
        assert a == b
        assert ra.to_json() == rb.to_json()

    @pytest.mark.parametrize("seed", SEEDS)
    def test_report_accounts_for_every_input(self, seed: int) -> None:
        scene = generate(random_scene_spec(seed, 96, 96, noise_blobs=4))
        out, report = fuse(scene.fragmented, scene.semantic,
                           FusionConfig(orphan_policy="drop"))
        assert all_ids(report) == sorted(scene.fragmented.ids)
        assert len(report.orphans) == len(scene.fragmented) - \
            len(scene.owners)
        assert report.output_count == len(out) == len(scene.ground_truth)
        assert out.ids == list(range(1, len(out) + 1))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_class_iou_not_worse(self, seed: int) -> None:
        scene = generate(random_scene_spec(seed, 96, 96))
        truth = scene.ground_truth.to_label_map()
        before = mean_iou(scene.fragmented.to_label_map(), truth, [1])
        union, _ = fuse(scene.fragmented, scene.semantic)
        filled, _ = fuse(scene.fragmented, scene.semantic,
                         FusionConfig(semantic_fill="fill_bridge"))
        assert mean_iou(union.to_label_map(), truth, [1]).mean_iou >= \
            before.mean_iou
        # Gaps between fragments are claimed back from the semantic mask.
        assert mean_iou(filled.to_label_map(), truth, [1]).mean_iou > \
            before.mean_iou


class TestRecoverySweep:
    """
    Recovery, idempotence and order invariance over 200 generated scenes.
    """

    @pytest.mark.parametrize("seed", range(200))
    def test_scene(self, seed: int) -> None:
        scene = generate(random_scene_spec(seed, 128, 128))
        truth = scene.ground_truth.to_label_map()
        before = mean_iou(scene.fragmented.to_label_map(), truth,
                          [1]).mean_iou

        union, _ = fuse(scene.fragmented, scene.semantic)
        assert len(union) == len(scene.ground_truth)
        assert mean_iou(union.to_label_map(), truth, [1]).mean_iou >= before

        cfg = FusionConfig(semantic_fill="fill_bridge")
        filled, report = fuse(scene.fragmented, scene.semantic, cfg)
        assert len(filled) == len(scene.ground_truth)
        assert mean_iou(filled.to_label_map(), truth, [1]).mean_iou > before

        again, _ = fuse(filled, scene.semantic, cfg)
        assert again == filled

        frag = scene.fragmented
        order = numpy.random.default_rng(seed).permutation(len(frag))
        shuffled = InstanceSet(frag.width, frag.height,
                               [frag.instances[i] for i in order])
        s_out, s_report = fuse(shuffled, scene.semantic, cfg)
        assert s_out == filled
        assert s_report.to_json() == report.to_json()

    def test_large_scene_time(self) -> None:
        scene = generate(random_scene_spec(0, 1024, 1024))
        start = time.perf_counter()
        out, _ = fuse(scene.fragmented, scene.semantic,
                      FusionConfig(semantic_fill="fill_bridge"))
        elapsed = time.perf_counter() - start
        assert len(out) == len(scene.ground_truth)
        assert elapsed < 1.0
