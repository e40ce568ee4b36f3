"""Tests for tensors, image I/O, sampling and weight stores."""

import struct

import numpy as np
import pytest

from deformfeat.errors import FormatError, NumericError, TruncatedDataError, WeightValidationError
from deformfeat.network.backbone import BackboneConfig, architecture_table
from deformfeat.numerics.image_io import load_image, save_image, standardize, to_grayscale
from deformfeat.numerics.sampling import (
    bilinear_gather,
    bilinear_sample,
    feature_to_image,
    gaussian_blur,
    image_to_feature,
    upsample_bilinear,
)
from deformfeat.numerics.tensor import Image, Precision, as_tensor
from deformfeat.numerics.weights import WeightStore, read_weights, seeded_random_weights, write_weights


class TestTensor:
    """Tests for tensor construction."""

    def test_rank2_gains_channel_axis(self):
        """Test (H, W) input becomes (H, W, 1)."""
        t = as_tensor(np.zeros((4, 5)))
        assert t.shape == (4, 5, 1)
        assert t.dtype == np.float32

    def test_float64_precision(self):
        """Test evaluation precision keeps 64-bit values."""
        assert as_tensor(np.ones((2, 2)), Precision.FLOAT64).dtype == np.float64

    def test_non_finite_rejected(self):
        """Test NaN input raises NumericError."""
        with pytest.raises(NumericError):
            as_tensor(np.array([[np.nan, 0.0]]))

    def test_bad_rank_rejected(self):
        """Test rank-1 input raises NumericError."""
        with pytest.raises(NumericError):
            as_tensor(np.zeros(3))


class TestImageIO:
    """Tests for PGM/PPM loading."""

    def test_pgm_roundtrip(self, tmp_path):
        """Test saved 8-bit gray pixels load back exactly."""
        pixels = np.arange(12, dtype=np.float32).reshape(3, 4) / 255.0
        path = tmp_path / "a.pgm"
        save_image(as_tensor(pixels), path)

        img = load_image(path)

        assert img.size == (4, 3)
        assert img.channels == 1
        np.testing.assert_allclose(img.pixels[:, :, 0], pixels, atol=1e-7)

    def test_ppm_to_grayscale(self, tmp_path):
        """Test colour input converts with luma weights."""
        pixels = np.zeros((2, 2, 3), dtype=np.float32)
        pixels[..., 0] = 1.0
        path = tmp_path / "c.ppm"
        save_image(as_tensor(pixels), path)

        gray = to_grayscale(load_image(path))

        assert gray.channels == 1
        np.testing.assert_allclose(gray.pixels, 0.299, atol=1e-6)

    def test_bad_magic(self, tmp_path):
        """Test a non-PGM file raises FormatError."""
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
        with pytest.raises(FormatError):
            load_image(path)

    def test_truncated_pixels(self, tmp_path):
        """Test a short payload raises TruncatedDataError."""
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
        with pytest.raises(TruncatedDataError):
            load_image(path)

    def test_missing_file(self, tmp_path):
        """Test a missing file raises an OSError."""
        with pytest.raises(OSError):
            load_image(tmp_path / "missing.pgm")


class TestStandardize:
    """Tests for whole-image standardization."""

    def test_zero_mean_unit_std(self, rng):
        """Test output has mean 0 and population std 1."""
        t = standardize(Image(as_tensor(rng.uniform(size=(10, 12)))), Precision.FLOAT64)
        assert abs(t.mean()) < 1e-12
        assert abs(t.std() - 1.0) < 1e-12

    def test_constant_image_maps_to_zero(self):
        """Test std clamp keeps constant images finite."""
        t = standardize(as_tensor(np.full((8, 8), 0.5)))
        assert np.all(t == 0)

    def test_std_clamped_at_one_micro(self):
        """Test a std below 1e-6 is divided by exactly 1e-6."""
        checker = np.indices((8, 8)).sum(axis=0) % 2 * 2.0 - 1.0
        t = standardize(Image(as_tensor(0.5 + 1e-7 * checker, Precision.FLOAT64)), Precision.FLOAT64)
        np.testing.assert_allclose(np.abs(t), 0.1, rtol=1e-6)

    def test_single_pixel_rejected(self):
        """Test a 1x1 image is rejected."""
        with pytest.raises(ValueError):
            standardize(as_tensor(np.ones((1, 1))))


class TestSampling:
    """Tests for bilinear sampling and coordinate mapping."""

    def test_integer_coordinates_hit_pixels(self, rng):
        """Test sampling at pixel centres returns the stored values."""
        t = as_tensor(rng.normal(size=(5, 6, 2)), Precision.FLOAT64)
        ys, xs = np.mgrid[0:5, 0:6]
        np.testing.assert_allclose(bilinear_gather(t, xs.astype(float), ys.astype(float)), t)

    def test_midpoint_interpolates(self):
        """Test the centre of four pixels averages them."""
        t = as_tensor(np.array([[0.0, 1.0], [2.0, 3.0]]), Precision.FLOAT64)
        assert bilinear_sample(t, 0.5, 0.5) == pytest.approx(1.5)

    def test_outside_clamps_to_border(self):
        """Test coordinates beyond the image read the edge pixel."""
        t = as_tensor(np.array([[0.0, 1.0], [2.0, 3.0]]), Precision.FLOAT64)
        assert bilinear_sample(t, -3.0, -3.0) == 0.0
        assert bilinear_sample(t, 9.0, 9.0) == 3.0

    def test_stride_centre_roundtrip(self):
        """Test feature/image coordinate maps invert each other."""
        cells = np.arange(5, dtype=float)
        for stride in (1, 2, 4):
            image = feature_to_image(cells, stride)
            np.testing.assert_allclose(image_to_feature(image, stride), cells)
        assert feature_to_image(0, 4) == 1.5

    def test_upsample_shape(self):
        """Test integer upsampling multiplies both sides."""
        assert upsample_bilinear(as_tensor(np.ones((3, 4))), 4).shape == (12, 16, 1)

    def test_blur_preserves_constant(self):
        """Test a normalized kernel leaves constant images unchanged."""
        t = as_tensor(np.full((9, 9), 0.25))
        np.testing.assert_allclose(gaussian_blur(t, 0.8), 0.25, atol=1e-7)


class TestWeights:
    """Tests for weight stores and the ASLW format."""

    @pytest.fixture
    def table(self):
        return architecture_table(BackboneConfig())

    def test_seeded_weights_deterministic(self, table):
        """Test the same seed yields identical stores."""
        assert seeded_random_weights(3, table) == seeded_random_weights(3, table)
        assert seeded_random_weights(3, table) != seeded_random_weights(4, table)

    def test_file_roundtrip(self, table, tmp_path):
        """Test write then read returns an equal store."""
        store = seeded_random_weights(0, table)
        path = tmp_path / "w.aslw"
        write_weights(store, path)
        assert read_weights(path, table) == store

    def test_bad_magic(self, tmp_path):
        """Test a wrong magic raises FormatError."""
        path = tmp_path / "w.aslw"
        path.write_bytes(b"NOPE\x01\x00\x00")
        with pytest.raises(FormatError):
            read_weights(path)

    def test_version_mismatch(self, tmp_path):
        """Test an unknown version raises FormatError."""
        path = tmp_path / "w.aslw"
        path.write_bytes(b"ASLW" + struct.pack("<B", 9) + struct.pack("<H", 0))
        with pytest.raises(FormatError):
            read_weights(path)

    def test_truncated_file(self, table, tmp_path):
        """Test a cut-off file raises TruncatedDataError."""
        path = tmp_path / "w.aslw"
        write_weights(seeded_random_weights(0, table), path)
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(TruncatedDataError):
            read_weights(path)

    def test_shape_mismatch_names_layer(self, table):
        """Test validation reports the offending layer."""
        store = seeded_random_weights(0, table)
        store.entries["conv2/bias"] = np.zeros(5, dtype=np.float32)
        with pytest.raises(WeightValidationError) as exc:
            store.validate(table)
        assert exc.value.layer == "conv2/bias"

    def test_missing_entry(self, table):
        """Test an absent layer fails validation."""
        store = seeded_random_weights(0, table)
        del store.entries["conv8/kernel"]
        with pytest.raises(WeightValidationError):
            store.validate(table)

    def test_parameter_count(self, table):
        """Test the count sums all entry sizes."""
        store = WeightStore(entries={"a": np.zeros((2, 3)), "b": np.zeros(4)})
        assert store.parameter_count() == 10
