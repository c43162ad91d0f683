import numpy as np
import pytest

from toothseg import degrade
from toothseg.degrade import DegradationKind

from oracles import naive_bilinear_up, naive_pyramid_down


def rand_img(rng, h=16, w=16):
    return rng.random((h, w))


class TestPyramidDown:
    def test_constant_image_stays_constant(self):
        img = np.full((12, 10), 0.37)
        out = degrade.pyramid_down(img)
        assert out.shape == (6, 5)
        np.testing.assert_allclose(out, 0.37, atol=1e-12)

    def test_impulse_matches_direct_convolution(self):
        img = np.zeros((8, 8))
        img[4, 4] = 1.0
        expected = naive_pyramid_down(img)
        out = degrade.pyramid_down(img)
        assert out.shape == (4, 4)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_random_images_match_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            img = rand_img(rng, 12, 14)
            np.testing.assert_allclose(
                degrade.pyramid_down(img), naive_pyramid_down(img), atol=1e-12
            )

    def test_halves_512(self):
        img = np.zeros((512, 512))
        assert degrade.pyramid_down(img).shape == (256, 256)

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError):
            degrade.pyramid_down(np.zeros((7, 8)))


class TestBilinearUp:
    def test_constant_preserved(self):
        out = degrade.bilinear_up(np.full((3, 3), 0.5), 9, 7)
        assert out.shape == (9, 7)
        np.testing.assert_allclose(out, 0.5, atol=1e-12)

    def test_row_ramp_2x2_to_2x4(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = degrade.bilinear_up(img, 2, 4)
        expected = np.array([[0.0, 1 / 3, 2 / 3, 1.0]] * 2)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_matches_closed_form_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            img = rand_img(rng, 5, 6)
            out = degrade.bilinear_up(img, 11, 9)
            np.testing.assert_allclose(out, naive_bilinear_up(img, 11, 9), atol=1e-12)

    def test_restores_original_shape(self):
        img = np.zeros((256, 256))
        assert degrade.bilinear_up(img, 512, 512).shape == (512, 512)

    def test_downscale_rejected(self):
        with pytest.raises(ValueError):
            degrade.bilinear_up(np.zeros((4, 4)), 2, 4)


class TestBlurDegrade:
    def test_constant_unchanged(self):
        img = np.full((16, 16), 0.8)
        for levels in (1, 2):
            np.testing.assert_allclose(
                degrade.blur_degrade(img, levels), img, atol=1e-12
            )

    def test_checkerboard_variance_drops(self):
        idx = np.indices((16, 16)).sum(axis=0)
        board = (idx % 2).astype(float)
        out = degrade.blur_degrade(board, 2)
        assert out.shape == board.shape
        assert out.var() < board.var()

    def test_variance_ordering_on_random_images(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            img = rand_img(rng, 16, 16)
            v0 = img.var()
            v1 = degrade.blur_degrade(img, 1).var()
            v2 = degrade.blur_degrade(img, 2).var()
            assert v2 <= v1 + 1e-12
            assert v1 <= v0 + 1e-12

    def test_bad_levels(self):
        with pytest.raises(ValueError):
            degrade.blur_degrade(np.zeros((8, 8)), 3)

    def test_indivisible_dims(self):
        with pytest.raises(ValueError):
            degrade.blur_degrade(np.zeros((6, 6)), 2)


class TestArtifact:
    def test_squares_pixels(self):
        img = np.array([[0.5, 0.0], [1.0, 0.25]])
        np.testing.assert_allclose(
            degrade.artifact_degrade(img), [[0.25, 0.0], [1.0, 0.0625]]
        )

    def test_output_never_exceeds_input(self):
        rng = np.random.default_rng(5)
        img = rand_img(rng)
        out = degrade.artifact_degrade(img)
        assert (out <= img + 1e-15).all()

    def test_range_precondition(self):
        with pytest.raises(ValueError):
            degrade.artifact_degrade(np.array([[1.5, 0.0]]))


class TestSampling:
    def test_deterministic_under_fixed_seed(self):
        seq1 = [degrade.sample_kind(np.random.default_rng(42)) for _ in range(1)]
        rng_a = np.random.default_rng(123)
        rng_b = np.random.default_rng(123)
        seq_a = [degrade.sample_kind(rng_a) for _ in range(50)]
        seq_b = [degrade.sample_kind(rng_b) for _ in range(50)]
        assert seq_a == seq_b
        assert seq1[0] in DegradationKind

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(2024)
        n = 100_000
        counts = {k: 0 for k in DegradationKind}
        for _ in range(n):
            counts[degrade.sample_kind(rng)] += 1
        for k, c in counts.items():
            assert 0.245 <= c / n <= 0.255, f"{k}: {c / n}"

    def test_all_four_kinds_exist(self):
        assert len(DegradationKind) == 4
        assert len(degrade.KINDS) == 4


class TestApply:
    def test_identity_returns_equal_copy(self):
        rng = np.random.default_rng(1)
        img = rand_img(rng)
        out = degrade.apply(img, DegradationKind.IDENTITY)
        assert out is not img
        np.testing.assert_array_equal(out, img)
        again = degrade.apply(out, DegradationKind.IDENTITY)
        np.testing.assert_array_equal(again, img)

    def test_artifact_dispatch(self):
        rng = np.random.default_rng(2)
        img = rand_img(rng)
        np.testing.assert_array_equal(
            degrade.apply(img, DegradationKind.ARTIFACT), degrade.artifact_degrade(img)
        )

    def test_blur_dispatch_matches_components(self):
        rng = np.random.default_rng(3)
        img = rand_img(rng, 16, 16)
        np.testing.assert_array_equal(
            degrade.apply(img, DegradationKind.BLUR1), degrade.blur_degrade(img, 1)
        )
        np.testing.assert_array_equal(
            degrade.apply(img, DegradationKind.BLUR2), degrade.blur_degrade(img, 2)
        )

    def test_shape_and_range_preserved_for_all_kinds(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            img = rand_img(rng, 16, 16)
            for kind in DegradationKind:
                out = degrade.apply(img, kind)
                assert out.shape == img.shape
                assert out.min() >= 0.0 and out.max() <= 1.0
