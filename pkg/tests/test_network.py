"""Tests for deformation variants, (deformable) convolution and the backbone."""

import numpy as np
import pytest

from deformfeat.detection.base import Keypoint
from deformfeat.errors import NumericError, WeightValidationError
from deformfeat.network.backbone import (
    NO_DEFORMATION,
    BackboneConfig,
    architecture_table,
    dense_descriptors,
    forward,
    parameter_count,
    sample_descriptor,
    sample_descriptors,
)
from deformfeat.network.dcn import (
    ConvLayer,
    DeformField,
    conv2d,
    deform_conv2d,
    deform_conv2d_offset_grad,
    predict_deform_field,
)
from deformfeat.network.variants import DeformVariantRegistry
from deformfeat.numerics.tensor import Precision, as_tensor
from deformfeat.numerics.weights import seeded_random_weights


def naive_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 convolution with clamp-to-edge borders, written as loops."""
    height, width, _ = x.shape
    k = kernel.shape[0]
    half = k // 2
    out = np.zeros((height, width, kernel.shape[3]))
    for i in range(height):
        for j in range(width):
            for dy in range(k):
                for dx in range(k):
                    yy = min(max(i + dy - half, 0), height - 1)
                    xx = min(max(j + dx - half, 0), width - 1)
                    out[i, j] += x[yy, xx] @ kernel[dy, dx]
    return out + bias


def random_layer(rng, c_in: int, c_out: int, stride: int = 1) -> ConvLayer:
    return ConvLayer(kernel=rng.normal(size=(3, 3, c_in, c_out)), bias=rng.normal(size=c_out), stride=stride)


def zero_field(height: int, width: int, modulation: float = 0.5) -> DeformField:
    return DeformField(offsets=np.zeros((height, width, 18)), modulation=np.full((height, width, 9), modulation))


class TestVariants:
    """Tests for the deformation variant registry."""

    def test_registered_types(self):
        """Test all four variants are registered."""
        assert DeformVariantRegistry.list_types() == ["affine", "free", "homography", "similarity"]

    @pytest.mark.parametrize("name,count", [("free", 18), ("similarity", 3), ("affine", 6), ("homography", 8)])
    def test_parameter_counts(self, name, count):
        """Test raw parameter counts for a 3x3 kernel."""
        assert DeformVariantRegistry.create(name).parameter_count(3) == count

    def test_unknown_variant(self):
        """Test an unknown name raises ValueError."""
        with pytest.raises(ValueError):
            DeformVariantRegistry.create("projective")

    @pytest.mark.parametrize("name", ["similarity", "affine", "homography"])
    def test_zero_raw_is_near_identity(self, name):
        """Test zero raw parameters give zero offsets (angle from (0, 1))."""
        variant = DeformVariantRegistry.create(name)
        raw = np.zeros((2, 3, variant.parameter_count(3)))
        if name != "homography":
            raw[..., 2] = 1.0  # theta = atan2(0, 1) = 0
        mapped = variant.to_offsets(raw, 3)
        assert mapped.offsets.shape == (2, 3, 18)
        np.testing.assert_allclose(mapped.offsets, 0.0, atol=1e-12)
        assert not mapped.degenerate.any()

    def test_degenerate_angle_flagged(self):
        """Test (0, 0) angle inputs are flagged."""
        mapped = DeformVariantRegistry.create("similarity").to_offsets(np.zeros((1, 2, 3)), 3)
        assert mapped.degenerate.all()
        assert np.all(np.isfinite(mapped.offsets))

    def test_collinear_homography_position_falls_back(self, rng):
        """Test one unsolvable homography position gets zero offsets while the rest are solved."""
        variant = DeformVariantRegistry.create("homography")
        raw = rng.normal(scale=0.3, size=(2, 3, 8))
        # tanh saturates to +-1: corners 0 and 1 both land on the origin
        raw[1, 0] = [30.0, 30.0, -30.0, 30.0, 0.0, 0.0, 0.0, 0.0]

        mapped = variant.to_offsets(raw, 3)

        expected_mask = np.zeros((2, 3), dtype=bool)
        expected_mask[1, 0] = True
        np.testing.assert_array_equal(mapped.degenerate, expected_mask)
        np.testing.assert_array_equal(mapped.offsets[1, 0], 0.0)
        solved = variant.to_offsets(raw[:1], 3)
        np.testing.assert_allclose(mapped.offsets[:1], solved.offsets, atol=1e-12)
        assert not solved.degenerate.any()
        assert np.any(mapped.offsets[0] != 0.0)


class TestConvolution:
    """Tests for regular and deformable convolution."""

    def test_conv_matches_loops(self, rng):
        """Test conv2d equals a naive loop oracle."""
        x = as_tensor(rng.normal(size=(6, 7, 2)), Precision.FLOAT64)
        layer = random_layer(rng, 2, 3)
        np.testing.assert_allclose(conv2d(x, layer), naive_conv(x, layer.kernel, layer.bias), atol=1e-10)

    def test_stride_two_shape(self, rng):
        """Test stride 2 halves sizes rounding up."""
        x = as_tensor(rng.normal(size=(7, 9, 1)), Precision.FLOAT64)
        assert conv2d(x, random_layer(rng, 1, 4, stride=2)).shape == (4, 5, 4)

    def test_zero_offsets_reduce_to_regular(self, rng):
        """Test zero offsets and modulation 0.5 give half the pre-bias convolution."""
        for _ in range(10):
            x = as_tensor(rng.normal(size=(5, 6, 2)), Precision.FLOAT64)
            layer = random_layer(rng, 2, 3)
            regular = conv2d(x, layer, epilogue=False)
            deformed = deform_conv2d(x, layer, zero_field(5, 6), epilogue=False)
            np.testing.assert_allclose(deformed, 0.5 * regular, rtol=1e-10, atol=1e-12)

    def test_integer_shift(self, rng):
        """Test an all-taps offset of (1, 0) equals convolving the shifted input."""
        x = as_tensor(rng.normal(size=(5, 8, 1)), Precision.FLOAT64)
        layer = random_layer(rng, 1, 2)
        deform = zero_field(5, 8, modulation=1.0)
        deform.offsets[..., 0::2] = 1.0
        shifted = as_tensor(np.concatenate([x[:, 1:], x[:, -1:]], axis=1), Precision.FLOAT64)
        # interior columns see identical samples
        np.testing.assert_allclose(
            deform_conv2d(x, layer, deform)[:, 1:-2], conv2d(shifted, layer)[:, 1:-2], atol=1e-10
        )

    def test_normalization_and_relu(self, rng):
        """Test the epilogue normalizes and rectifies."""
        x = as_tensor(rng.normal(size=(4, 4, 1)), Precision.FLOAT64)
        base = random_layer(rng, 1, 2)
        layer = ConvLayer(
            kernel=base.kernel, bias=base.bias, mean=np.array([0.1, -0.2]), variance=np.array([4.0, 0.25]), relu=True
        )
        pre = conv2d(x, base)
        expected = np.maximum((pre - layer.mean) / np.sqrt(layer.variance + 1e-3), 0.0)
        np.testing.assert_allclose(conv2d(x, layer), expected, atol=1e-10)

    def test_channel_mismatch(self, rng):
        """Test a wrong input channel count raises."""
        with pytest.raises(ValueError):
            conv2d(as_tensor(np.zeros((3, 3, 2))), random_layer(rng, 1, 1))

    def test_field_shape_mismatch(self, rng):
        """Test a field of the wrong grid size raises."""
        x = as_tensor(np.zeros((4, 4, 1)))
        with pytest.raises(ValueError):
            deform_conv2d(x, random_layer(rng, 1, 1), zero_field(3, 4))

    def test_non_finite_offsets(self):
        """Test NaN offsets are rejected."""
        offsets = np.zeros((2, 2, 18))
        offsets[0, 0, 0] = np.nan
        with pytest.raises(NumericError):
            DeformField(offsets=offsets, modulation=np.ones((2, 2, 9)))

    def test_modulation_gradient_is_sample(self, rng):
        """Test d/dm of a unit upstream equals the weighted samples."""
        x = as_tensor(rng.normal(size=(4, 5, 1)), Precision.FLOAT64)
        layer = random_layer(rng, 1, 1)
        deform = zero_field(4, 5)
        deform.offsets[:] = rng.uniform(0.1, 0.4, size=deform.offsets.shape)
        upstream = np.ones((4, 5, 1))
        _, d_modulation = deform_conv2d_offset_grad(x, layer, deform, upstream)

        eps = 1e-6
        bumped = DeformField(deform.offsets, deform.modulation.copy())
        bumped.modulation[1, 2, 4] += eps
        numeric = (deform_conv2d(x, layer, bumped, epilogue=False) - deform_conv2d(x, layer, deform, epilogue=False)).sum() / eps
        assert d_modulation[1, 2, 4] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


class TestPredictor:
    """Tests for offset prediction."""

    @pytest.mark.parametrize("variant", ["free", "similarity", "affine", "homography"])
    def test_zero_predictor(self, variant):
        """Test an all-zero predictor gives sigmoid(0) = 0.5 modulation and finite offsets."""
        count = DeformVariantRegistry.create(variant).parameter_count(3) + 9
        predictor = ConvLayer(kernel=np.zeros((3, 3, 2, count)), bias=np.zeros(count))
        deform = predict_deform_field(as_tensor(np.ones((3, 4, 2))), predictor, variant)
        assert deform.offsets.shape == (3, 4, 18)
        np.testing.assert_allclose(deform.modulation, 0.5)
        assert np.all(np.isfinite(deform.offsets))

    def test_width_mismatch(self):
        """Test a predictor of the wrong width raises."""
        predictor = ConvLayer(kernel=np.zeros((3, 3, 1, 5)), bias=np.zeros(5))
        with pytest.raises(ValueError):
            predict_deform_field(as_tensor(np.ones((3, 3, 1))), predictor, "similarity")


class TestBackbone:
    """Tests for the trunk."""

    def test_forward_shapes(self, rng):
        """Test tapped maps have strides 1, 2 and 4 with ceil rounding."""
        cfg = BackboneConfig()
        weights = seeded_random_weights(0, architecture_table(cfg))
        h = forward(as_tensor(rng.normal(size=(30, 37))), cfg, weights)

        assert h.level("conv1").tensor.shape == (30, 37, 32)
        assert h.level("conv3").tensor.shape == (15, 19, 64)
        assert h.conv8.shape == (8, 10, 128)
        assert set(h.fields) == {"conv6", "conv7", "conv8"}

    @pytest.mark.parametrize("dcn", ["free", NO_DEFORMATION])
    def test_conv8_follows_input_shift(self, rng, dcn):
        """Test a (4, 0) px input shift moves conv8 by (1, 0) cells outside an 8-cell border."""
        cfg = BackboneConfig(dcn=dcn)
        weights = seeded_random_weights(3, architecture_table(cfg))
        canvas = rng.normal(size=(96, 100))
        # shifted[:, x + 4] == base[:, x]
        base = forward(as_tensor(canvas[:, 4:]), cfg, weights).conv8
        shifted = forward(as_tensor(canvas[:, :96]), cfg, weights).conv8
        border = 8
        rows, cols = base.shape[:2]

        expected = base[border : rows - border, border : cols - border - 1]
        moved = shifted[border : rows - border, border + 1 : cols - border]
        assert np.max(np.abs(moved - expected)) < 1e-4

    def test_deterministic(self, rng):
        """Test two passes give identical features."""
        cfg = BackboneConfig(dcn="affine")
        weights = seeded_random_weights(1, architecture_table(cfg))
        image = as_tensor(rng.normal(size=(20, 20)))
        np.testing.assert_array_equal(forward(image, cfg, weights).conv8, forward(image, cfg, weights).conv8)

    def test_no_deformation_table(self):
        """Test the regular baseline has no offset predictors."""
        table = architecture_table(BackboneConfig(dcn=NO_DEFORMATION))
        assert not any("offset" in name for name in table)

    def test_dcn_layers_ablation(self):
        """Test dcn_layers keeps only the last flagged layers deformable."""
        assert BackboneConfig(dcn_layers=1).deformable_layers() == ["conv8"]
        assert BackboneConfig(dcn_layers=0).deformable_layers() == []
        with pytest.raises(ValueError):
            BackboneConfig(dcn_layers=4)

    def test_parameter_count_matches_store(self):
        """Test the closed-form count equals the seeded store size."""
        for dcn in ("free", "similarity", "affine", "homography", NO_DEFORMATION):
            cfg = BackboneConfig(dcn=dcn)
            assert parameter_count(cfg) == seeded_random_weights(0, architecture_table(cfg)).parameter_count()

    def test_weights_validated(self, rng):
        """Test weights of another variant are rejected."""
        weights = seeded_random_weights(0, architecture_table(BackboneConfig(dcn="free")))
        with pytest.raises(WeightValidationError):
            forward(as_tensor(rng.normal(size=(16, 16))), BackboneConfig(dcn="similarity"), weights)

    def test_unknown_variant(self):
        """Test an unknown dcn name is rejected at construction."""
        with pytest.raises(ValueError):
            BackboneConfig(dcn="projective")

    def test_descriptors_unit_norm(self, rng):
        """Test dense and sampled descriptors have unit length."""
        cfg = BackboneConfig()
        h = forward(as_tensor(rng.normal(size=(24, 24))), cfg, seeded_random_weights(0, architecture_table(cfg)))
        dense = dense_descriptors(h)
        norms = np.linalg.norm(dense.values, axis=-1)[~dense.degenerate]
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

        sampled = sample_descriptors(h, np.array([3.3, 10.0, 20.7]), np.array([5.1, 12.0, 2.2]))
        assert sampled.shape == (3, 128)
        np.testing.assert_allclose(np.linalg.norm(sampled, axis=1), 1.0, atol=1e-5)

    def test_single_keypoint_descriptor(self, rng):
        """Test sampling at one keypoint equals the batched sample."""
        cfg = BackboneConfig()
        h = forward(as_tensor(rng.normal(size=(24, 24))), cfg, seeded_random_weights(0, architecture_table(cfg)))
        batched = sample_descriptors(h, np.array([3.3, 10.0]), np.array([5.1, 12.0]))

        np.testing.assert_allclose(sample_descriptor(h, Keypoint(10.0, 12.0, 1.0)), batched[1], atol=1e-7)
