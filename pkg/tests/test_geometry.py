"""Tests for the DLT solver, local transforms and their Jacobians."""

import math

import numpy as np
import pytest

from deformfeat.errors import SingularConfigurationError, SingularProjectionError
from deformfeat.geometry.dlt import SOURCE_CORNERS, dlt_solve
from deformfeat.geometry.jacobians import jacobian_analytic, op_function, op_jacobian
from deformfeat.geometry.transforms import (
    Affine,
    FreeForm,
    Homography,
    Similarity,
    activate_angle,
    activate_residuals,
    activate_scale,
    affine_matrix,
    kernel_grid,
    offsets_from_homographies,
    offsets_from_transform,
    shape_matrix,
    similarity_matrix,
)
from deformfeat.losses.gradcheck import GradcheckReport, finite_difference, gradcheck


def constrained_homography(rng: np.random.Generator) -> np.ndarray:
    H = np.eye(3)
    H[:2, :2] += rng.uniform(-0.2, 0.2, size=(2, 2))
    H[2, :2] = rng.uniform(-0.1, 0.1, size=2)
    return H


def corner_offsets_of(H: np.ndarray) -> np.ndarray:
    homogeneous = np.hstack([SOURCE_CORNERS, np.ones((4, 1))]) @ H.T
    return (homogeneous[:, :2] / homogeneous[:, 2:] - SOURCE_CORNERS).ravel()


class TestDLT:
    """Tests for the four-point constrained homography solve."""

    def test_zero_offsets_give_identity(self):
        """Test unmoved corners solve to the identity."""
        np.testing.assert_allclose(dlt_solve(np.zeros(8)), np.eye(3), atol=1e-12)

    def test_roundtrip(self, rng):
        """Test known constrained homographies are recovered from their corners."""
        for _ in range(50):
            H = constrained_homography(rng)
            np.testing.assert_allclose(dlt_solve(corner_offsets_of(H)), H, atol=1e-6)

    def test_structure(self, rng):
        """Test the solution keeps H13 = H23 = 0 and H33 = 1."""
        H = dlt_solve(rng.uniform(-0.3, 0.3, size=8))
        assert H[0, 2] == 0.0
        assert H[1, 2] == 0.0
        assert H[2, 2] == 1.0

    def test_collinear_rejected(self):
        """Test three collinear target corners raise."""
        targets = np.array([[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0], [-1.0, 1.0]])
        with pytest.raises(SingularConfigurationError):
            dlt_solve((targets - SOURCE_CORNERS).ravel())

    def test_wrong_length(self):
        """Test offsets must have 8 entries."""
        with pytest.raises(ValueError):
            dlt_solve(np.zeros(6))


class TestActivations:
    """Tests for the bounded parameter activations."""

    def test_scale_bounds(self):
        """Test scale stays within [1/e, e] and is 1 at 0."""
        assert activate_scale(0.0) == pytest.approx(1.0)
        values = activate_scale(np.array([-50.0, 50.0]))
        np.testing.assert_allclose(values, [math.exp(-1), math.e])

    def test_angle_degenerate(self):
        """Test (0, 0) maps to angle 0 with the degenerate flag."""
        assert activate_angle(0.0, 0.0) == (0.0, True)
        theta, degenerate = activate_angle(1.0, 0.0)
        assert theta == pytest.approx(math.pi / 2)
        assert not degenerate

    def test_residuals_open_interval(self):
        """Test residuals never reach +-1."""
        r = activate_residuals(np.array([-100.0, 0.0, 100.0]))
        assert np.all(np.abs(r) < 1.0)
        assert r[1] == 0.0

    def test_shape_matrix_unit_determinant(self, rng):
        """Test A' has determinant 1 for any residuals."""
        for a11, a21, a22 in rng.uniform(-0.9, 0.9, size=(20, 3)):
            assert np.linalg.det(shape_matrix(a11, a21, a22)) == pytest.approx(1.0)


class TestMatrices:
    """Tests for the similarity and affine matrices."""

    def test_similarity_sign_convention(self):
        """Test S = lambda [[cos, sin], [-sin, cos]]."""
        np.testing.assert_allclose(similarity_matrix(2.0, math.pi / 2), [[0.0, 2.0], [-2.0, 0.0]], atol=1e-12)

    def test_similarity_determinant(self, rng):
        """Test det(S) = lambda squared."""
        scale, theta = rng.uniform(0.5, 2.0), rng.uniform(-math.pi, math.pi)
        assert np.linalg.det(similarity_matrix(scale, theta)) == pytest.approx(scale**2)

    def test_affine_zero_residuals_is_similarity(self):
        """Test zero residuals reduce the affine matrix to the similarity."""
        np.testing.assert_allclose(affine_matrix(1.5, 0.3, 0.0, 0.0, 0.0), similarity_matrix(1.5, 0.3), atol=1e-12)

    def test_affine_determinant(self, rng):
        """Test the shape part keeps det(A) = lambda squared."""
        a11, a21, a22 = rng.uniform(-0.5, 0.5, size=3)
        assert np.linalg.det(affine_matrix(1.2, 0.7, a11, a21, a22)) == pytest.approx(1.44)

    def test_batched(self):
        """Test array inputs give one matrix per element."""
        assert similarity_matrix(np.ones((4, 3)), np.zeros((4, 3))).shape == (4, 3, 2, 2)


class TestOffsets:
    """Tests for transform-to-offset conversion."""

    def test_kernel_grid_order(self):
        """Test grid rows are outermost."""
        grid = kernel_grid(3)
        assert grid.shape == (9, 2)
        np.testing.assert_array_equal(grid[0], [-1, -1])
        np.testing.assert_array_equal(grid[1], [0, -1])
        np.testing.assert_array_equal(grid[4], [0, 0])

    def test_even_kernel_rejected(self):
        """Test even kernel sizes raise."""
        with pytest.raises(ValueError):
            kernel_grid(4)

    @pytest.mark.parametrize(
        "transform",
        [Similarity(), Affine(), Homography(), FreeForm(offsets=(0.0,) * 18)],
        ids=["similarity", "affine", "homography", "free"],
    )
    def test_identity_gives_zero_offsets(self, transform):
        """Test identity parameters produce zero offsets."""
        np.testing.assert_allclose(offsets_from_transform(transform), 0.0, atol=1e-12)

    def test_similarity_rotation(self):
        """Test a quarter turn moves (1, 0) to (0, -1)."""
        offsets = offsets_from_transform(Similarity(scale=1.0, theta=math.pi / 2)).reshape(9, 2)
        grid = kernel_grid(3)
        moved = grid + offsets
        index = int(np.flatnonzero((grid[:, 0] == 1) & (grid[:, 1] == 0))[0])
        np.testing.assert_allclose(moved[index], [0.0, -1.0], atol=1e-12)

    def test_scale_offsets(self):
        """Test scale 2 doubles every grid vector."""
        offsets = offsets_from_transform(Similarity(scale=2.0)).reshape(9, 2)
        np.testing.assert_allclose(offsets, kernel_grid(3))

    def test_nonpositive_scale_rejected(self):
        """Test similarity scale must be positive."""
        with pytest.raises(ValueError):
            Similarity(scale=0.0)

    def test_projection_to_infinity(self):
        """Test a grid point on the line at infinity raises."""
        H = np.eye(3)
        H[2, 0] = 1.0  # denominator u + 1 vanishes at u = -1
        with pytest.raises(SingularProjectionError):
            offsets_from_homographies(H, 3)

    def test_free_form_length_checked(self):
        """Test free-form offsets need 2 k^2 values."""
        with pytest.raises(ValueError):
            offsets_from_transform(FreeForm(offsets=(0.0,) * 4))


class TestJacobians:
    """Analytic Jacobians against central differences."""

    @pytest.mark.parametrize(
        "op,variant,size",
        [
            ("similarity", "similarity", 2),
            ("affine", "affine", 5),
            ("dlt_solve", "similarity", 8),
            ("offsets", "similarity", 2),
            ("offsets", "affine", 5),
            ("offsets", "homography", 8),
            ("offsets", "free", 18),
        ],
    )
    def test_matches_finite_differences(self, rng, op, variant, size):
        """Test every geometric op passes the gradient check at random points."""
        for _ in range(10):
            params = rng.uniform(-0.3, 0.3, size=size)
            if op in ("similarity", "affine") or (op == "offsets" and variant in ("similarity", "affine")):
                params[0] = rng.uniform(0.5, 2.0)
            report = gradcheck(op_function(op, variant), op_jacobian(op, variant), params, name=op)
            assert report.passed, report

    def test_dlt_jacobian_collinear(self):
        """Test the DLT Jacobian refuses collinear corners."""
        targets = np.array([[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0], [-1.0, 1.0]])
        with pytest.raises(SingularConfigurationError):
            jacobian_analytic("dlt_solve", (targets - SOURCE_CORNERS).ravel())

    def test_unknown_op(self):
        """Test an unknown op name raises ValueError."""
        with pytest.raises(ValueError):
            jacobian_analytic("shear", np.zeros(2))


class TestGradcheck:
    """Tests for the finite-difference harness itself."""

    def test_quadratic(self):
        """Test the harness passes a correct gradient."""
        report = gradcheck(lambda x: np.sum(x**2), lambda x: 2 * x, np.array([1.0, -2.0, 0.5]), name="quad")
        assert report.passed
        assert report.status == "pass"
        assert report.checked == 3

    def test_wrong_gradient_fails(self):
        """Test a wrong analytic gradient is caught."""
        report = gradcheck(lambda x: np.sum(x**2), lambda x: 3 * x, np.array([1.0, 2.0]))
        assert not report.passed
        assert report.failed_entries == 2

    def test_large_partial_uses_absolute_tolerance(self):
        """Test a partial of size 100 off by 5e-3 fails; scale gives it no slack."""
        report = gradcheck(lambda p: np.array([100.0 * p[0]]), lambda p: np.array([[100.005]]), np.array([0.3]))
        assert not report.passed
        assert report.failed_entries == 1
        assert report.max_abs_error == pytest.approx(5e-3, rel=1e-3)

    def test_large_correct_partial_passes(self):
        """Test an exact partial of size 100 passes."""
        report = gradcheck(lambda p: np.array([100.0 * p[0]]), lambda p: np.array([[100.0]]), np.array([0.3]))
        assert report.passed
        assert report.max_abs_error < 1e-6

    def test_nonsmooth_point_skipped(self):
        """Test a point on a kink is reported as non-smooth, not failed."""
        report = gradcheck(np.abs, np.sign, np.array([0.0]), nonsmooth=lambda x: bool(np.any(x == 0)))
        assert report.nonsmooth
        assert report.status == "nonsmooth"

    def test_evaluation_error_recorded(self):
        """Test exceptions in the function are recorded, not raised."""

        def broken(x):
            raise ArithmeticError("boom")

        report = gradcheck(broken, lambda x: x, np.zeros(2))
        assert report.errors
        assert not report.passed

    def test_threads_do_not_change_result(self, rng):
        """Test threaded columns equal the sequential ones."""
        point = rng.uniform(-0.3, 0.3, size=5)
        point[0] = 1.2
        fn = op_function("offsets", "affine")
        np.testing.assert_array_equal(finite_difference(fn, point), finite_difference(fn, point, threads=4))

    def test_report_defaults(self):
        """Test an empty report does not pass."""
        assert not GradcheckReport(name="empty").passed
