import math

import numpy
import pytest

from maskfuse.exceptions import DimensionMismatchError, MalformedInputError
from maskfuse.metrics import containment
from maskfuse.raster import (
    BinaryMask, GrayImage, Polygon, RgbImage, connected_components, rasterize
)
from maskfuse.synth import (
    SHARPEN_SIGMA, AdvancedParams, AugmentationLevel, GeometricParams, SceneSpec,
    Stripe, advanced_augment, augment, gaussian_kernel, generate,
    geometric_augment, random_scene_spec, split_indices, transform_polygon
)


DIAGONAL = Stripe(cx=32, cy=32, length=40, width=6, angle=45)


class TestStripe:

    def test_axis_aligned_polygon(self) -> None:
        s = Stripe(cx=10, cy=5, length=8, width=2, angle=0)
        m = rasterize(s.polygon(), 20, 10)
        assert m.bbox() == (6, 4, 14, 6)
        assert m.area == 16

    def test_angle_counterclockwise(self) -> None:
        # At 90 degrees the stripe points up the screen.
        v = Stripe(cx=10, cy=10, length=8, width=2, angle=90).segment(0, 1)
        ys = v.vertices[:, 1]
        assert ys.max() == pytest.approx(14.0)
        assert ys.min() == pytest.approx(13.0)

    def test_segments_tile(self) -> None:
        s = Stripe(cx=20.3, cy=19.6, length=30, width=4, angle=30)
        a = rasterize(s.segment(0, 12), 40, 40)
        b = rasterize(s.segment(12, 18), 40, 40)
        assert a.intersection(b).is_empty()
        assert a.union(b) == rasterize(s.polygon(), 40, 40)


class TestSceneSpec:

    def test_invalid(self) -> None:
        with pytest.raises(ValueError):
            SceneSpec(64, 64, (DIAGONAL._replace(width=0.5),))
        with pytest.raises(ValueError):
            SceneSpec(64, 64, (DIAGONAL,), fragments=0)
        with pytest.raises(ValueError):
            # Gap must stay below length / fragments.
            SceneSpec(64, 64, (DIAGONAL,), fragments=4, gap=10)
        with pytest.raises(ValueError):
            SceneSpec(64, 64, (DIAGONAL,), noise_blobs=1, blob_radius=(3, 2))

    def test_json(self) -> None:
        spec = SceneSpec(64, 48, (DIAGONAL,), fragments=3, gap=2.5,
                         noise_blobs=2, blob_radius=(1.5, 3.0), rng_seed=9)
        assert SceneSpec.from_json(spec.to_json()) == spec

    def test_json_defaults_and_int_blobs(self) -> None:
        doc = {"width": 32, "height": 32, "noise_blobs": 4,
               "stripes": [{"cx": 16, "cy": 16, "length": 20, "width": 3}]}
        spec = SceneSpec.from_json(doc)
        assert spec.noise_blobs == 4
        assert spec.fragments == 1
        assert spec.stripes[0].angle == 0.0

    @pytest.mark.parametrize("doc", [
        {},
        {"width": 32, "height": 32},
        {"width": 32, "height": 32, "stripes": [{"cx": 1}]},
        {"width": "wide", "height": 32, "stripes": []},
        {"width": 32, "height": 32, "stripes": [], "fragments": 0},
    ])
    def test_json_malformed(self, doc: dict) -> None:
        with pytest.raises(MalformedInputError):
            SceneSpec.from_json(doc)


class TestGenerate:

    def test_single_fragment_is_ground_truth(self) -> None:
        spec = SceneSpec(64, 64, (DIAGONAL, Stripe(10, 50, 12, 3, 0)))
        scene = generate(spec)
        assert scene.fragmented == scene.ground_truth
        assert scene.owners == {1: 1, 2: 2}

    def test_diagonal_three_fragments(self) -> None:
        scene = generate(SceneSpec(64, 64, (DIAGONAL,), fragments=3, gap=3))
        assert len(scene.ground_truth) == 1
        assert len(scene.fragmented) == 3
        labeling = connected_components(scene.semantic)
        assert labeling.count == 1
        component = labeling.component(1)
        frags = [i.mask for i in scene.fragmented]
        for k, a in enumerate(frags):
            assert containment(component, a) == 1.0
            for b in frags[k + 1:]:
                assert a.intersection(b).is_empty()
        # Gaps leave stripe pixels uncovered.
        covered = scene.fragmented.union_mask()
        assert covered.area < scene.semantic.area

    def test_scene_invariants(self) -> None:
        scene = generate(random_scene_spec(11, 128, 96, noise_blobs=5))
        truth = {i.id: i.mask for i in scene.ground_truth}
        assert scene.semantic == scene.ground_truth.union_mask()
        for inst in scene.fragmented:
            if inst.id in scene.owners:
                owner = truth[scene.owners[inst.id]]
                assert owner.intersection(inst.mask) == inst.mask
            else:
                # Noise blobs stay out of the semantic mask.
                assert inst.mask.intersection(scene.semantic).is_empty()
        assert len(scene.fragmented) - len(scene.owners) == 5
        assert isinstance(scene.image, RgbImage)
        assert scene.image.shape == (96, 128)

    def test_deterministic(self) -> None:
        spec = random_scene_spec(5, 96, 96, noise_blobs=3)
        a = generate(spec)
        b = generate(spec)
        assert a.ground_truth == b.ground_truth
        assert a.fragmented == b.fragmented
        assert a.semantic == b.semantic
        assert a.image == b.image

    def test_seed_changes_scene(self) -> None:
        a = generate(SceneSpec(64, 64, (DIAGONAL,), noise_blobs=2,
                               rng_seed=1))
        b = generate(SceneSpec(64, 64, (DIAGONAL,), noise_blobs=2,
                               rng_seed=2))
        assert a.ground_truth == b.ground_truth
        assert a.fragmented != b.fragmented

    def test_off_canvas(self) -> None:
        with pytest.raises(ValueError):
            generate(SceneSpec(64, 64, (Stripe(200, 200, 10, 3, 0),)))


class TestRandomSceneSpec:

    @pytest.mark.parametrize("seed", range(8))
    def test_valid_and_separated(self, seed: int) -> None:
        spec = random_scene_spec(seed)
        assert 1 <= len(spec.stripes) <= 5
        assert 2 <= spec.fragments <= 5
        for s in spec.stripes:
            assert 10 <= s.angle <= 80
        scene = generate(spec)
        # Every stripe forms its own semantic region.
        assert connected_components(scene.semantic).count == \
            len(spec.stripes)

    def test_deterministic(self) -> None:
        assert random_scene_spec(3) == random_scene_spec(3)
        assert random_scene_spec(3) != random_scene_spec(4)


class TestGeometricAugment:

    @staticmethod
    def _scene() -> tuple:
        rng = numpy.random.default_rng(0)
        img = GrayImage(rng.integers(0, 256, (33, 33)))
        mask = rasterize(Stripe(16, 16, 20, 5, 30).polygon(), 33, 33)
        return img, mask

    def test_identity(self) -> None:
        img, mask = self._scene()
        out_img, (out_mask,) = geometric_augment(img, [mask])
        assert out_img == img
        assert out_mask == mask

    def test_quarter_turn(self) -> None:
        img, mask = self._scene()
        out_img, (out_mask,) = geometric_augment(
            img, [mask], GeometricParams(rotation_deg=90)
        )
        numpy.testing.assert_array_equal(out_img.samples,
                                         numpy.rot90(img.samples))
        numpy.testing.assert_array_equal(out_mask.bits,
                                         numpy.rot90(mask.bits))

    def test_four_quarter_turns(self) -> None:
        img, mask = self._scene()
        rgb = RgbImage.from_gray(img)
        out_img, out_masks = rgb, [mask]
        for _ in range(4):
            out_img, out_masks = geometric_augment(
                out_img, out_masks, GeometricParams(rotation_deg=90)
            )
        assert out_img == rgb
        assert out_masks == [mask]

    def test_masks_stay_binary(self) -> None:
        img, mask = self._scene()
        params = GeometricParams(scale=1.17, rotation_deg=23.5, shear=0.13)
        out_img, (out_mask,) = geometric_augment(img, [mask], params)
        assert out_mask.bits.dtype == bool
        assert isinstance(out_img, GrayImage)
        assert out_img.shape == img.shape

    def test_commutes_with_rasterization(self) -> None:
        n = 128
        poly = Polygon([(24, 44), (104, 44), (104, 84), (24, 84)])
        img = GrayImage(numpy.zeros((n, n)))
        for params in (GeometricParams(1.1, 20.0, 0.1),
                       GeometricParams(0.9, -35.0, 0.0),
                       GeometricParams(1.0, 0.0, -0.2)):
            _, (warped,) = geometric_augment(img, [rasterize(poly, n, n)],
                                             params)
            direct = rasterize(transform_polygon(poly, params, n, n), n, n)
            assert abs(warped.area - direct.area) <= 0.02 * direct.area
            assert warped.intersection(direct).area >= 0.95 * direct.area

    def test_scale_area(self) -> None:
        n = 128
        poly = Polygon([(44, 44), (84, 44), (84, 84), (44, 84)])
        scaled = transform_polygon(poly, GeometricParams(scale=1.5), n, n)
        assert abs(scaled.signed_area()) == \
            pytest.approx(abs(poly.signed_area()) * 2.25)

    def test_errors(self) -> None:
        img, mask = self._scene()
        with pytest.raises(ValueError):
            geometric_augment(img, [mask], GeometricParams(scale=0))
        with pytest.raises(DimensionMismatchError):
            geometric_augment(img, [BinaryMask.empty(5, 5)])


class TestAdvancedAugment:

    IMG = RgbImage(numpy.random.default_rng(2).integers(20, 230, (16, 12, 3)))

    def test_neutral(self) -> None:
        assert advanced_augment(self.IMG) == self.IMG

    def test_blur_constant(self) -> None:
        flat = GrayImage(numpy.full((9, 9), 77))
        for sigma in (0.5, 1.0, 2.7):
            out = advanced_augment(flat, AdvancedParams(gaussian_blur_sigma=sigma))
            assert out == flat
            out = advanced_augment(flat, AdvancedParams(sharpness_amount=0.8))
            assert out == flat

    def test_sharpen_step_edge(self) -> None:
        row = [100.0] * 4 + [150.0] * 4
        amount = 0.8
        radius = int(math.ceil(3 * SHARPEN_SIGMA))
        offsets = range(-radius, radius + 1)
        weights = [math.exp(-0.5 * (d / SHARPEN_SIGMA) ** 2) for d in offsets]
        expected = []
        for x, v in enumerate(row):
            blurred = sum(
                w * row[min(max(x + d, 0), len(row) - 1)]
                for w, d in zip(weights, offsets)
            ) / sum(weights)
            expected.append(round(v + amount * (v - blurred)))
        # Overshoot on both sides of the edge.
        assert expected == [100, 100, 98, 88, 162, 152, 150, 150]

        out = advanced_augment(GrayImage(numpy.array([row] * 3)),
                               AdvancedParams(sharpness_amount=amount))
        for r in range(3):
            assert out.samples[r].tolist() == expected

    def test_blur_smooths(self) -> None:
        out = advanced_augment(self.IMG, AdvancedParams(gaussian_blur_sigma=1.5))
        assert out.samples.astype(float).var() < self.IMG.samples.astype(float).var()

    def test_noise_seeded(self) -> None:
        p = AdvancedParams(gaussian_noise_stddev=5.0, noise_seed=42)
        a = advanced_augment(self.IMG, p)
        assert a == advanced_augment(self.IMG, p)
        assert a != self.IMG
        assert a != advanced_augment(self.IMG, p._replace(noise_seed=43))

    def test_brightness_clamped(self) -> None:
        img = GrayImage([[0, 100, 250]])
        up = advanced_augment(img, AdvancedParams(brightness_delta=10))
        numpy.testing.assert_array_equal(up.samples, [[10, 110, 255]])
        down = advanced_augment(img, AdvancedParams(brightness_delta=-50))
        numpy.testing.assert_array_equal(down.samples, [[0, 50, 200]])

    def test_negative_parameters(self) -> None:
        with pytest.raises(ValueError):
            advanced_augment(self.IMG, AdvancedParams(gaussian_blur_sigma=-1))
        with pytest.raises(ValueError):
            advanced_augment(self.IMG,
                             AdvancedParams(gaussian_noise_stddev=-1))


class TestGaussianKernel:

    @pytest.mark.parametrize("sigma", [0.0, 0.3, 1.0, 2.5, 7.1])
    def test_normalized(self, sigma: float) -> None:
        k = gaussian_kernel(sigma)
        assert abs(k.sum() - 1.0) <= 1e-9
        assert k.size == 2 * int(math.ceil(3 * sigma)) + 1
        numpy.testing.assert_allclose(k, k[::-1])

    def test_negative(self) -> None:
        with pytest.raises(ValueError):
            gaussian_kernel(-0.1)


class TestAugment:

    def test_none(self) -> None:
        img = GrayImage(numpy.eye(8) * 200)
        mask = BinaryMask(numpy.eye(8))
        out_img, out_masks = augment(img, [mask], "none", seed=1)
        assert out_img is img
        assert out_masks == [mask]

    @pytest.mark.parametrize("level", list(AugmentationLevel))
    def test_seeded(self, level: AugmentationLevel) -> None:
        img = RgbImage(numpy.random.default_rng(4).integers(0, 256,
                                                            (24, 24, 3)))
        mask = rasterize(Stripe(12, 12, 14, 4, 45).polygon(), 24, 24)
        a = augment(img, [mask], level, seed=7)
        b = augment(img, [mask], level.value, seed=7)
        assert a[0] == b[0]
        assert a[1] == b[1]
        assert a[0].shape == img.shape

    def test_unknown_level(self) -> None:
        with pytest.raises(ValueError):
            augment(GrayImage([[0]]), [], "extreme", seed=0)


class TestSplitIndices:

    def test_partition(self) -> None:
        train, val, test = split_indices(50, seed=3)
        assert (len(train), len(val), len(test)) == (32, 8, 10)
        assert sorted(train + val + test) == list(range(50))
        assert split_indices(50, seed=3) == (train, val, test)
        assert split_indices(50, seed=4) != (train, val, test)

    def test_small(self) -> None:
        assert split_indices(0, seed=0) == ([], [], [])
        train, val, test = split_indices(1, seed=0)
        assert len(train + val + test) == 1

    def test_fractions(self) -> None:
        with pytest.raises(ValueError):
            split_indices(10, 0, test_fraction=0.7, validation_fraction=0.4)
        with pytest.raises(ValueError):
            split_indices(-1, 0)
