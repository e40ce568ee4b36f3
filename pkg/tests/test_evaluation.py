"""Tests for matching, homography and epipolar metrics, datasets and reports."""

import math
import threading
from dataclasses import replace

import numpy as np
import pytest

from deformfeat.errors import FormatError, NumericError
from deformfeat.evaluation import epipolar
from deformfeat.evaluation.datasets import (
    HPatchesSequence,
    discover_sequences,
    read_matrix,
    read_pair_list,
)
from deformfeat.evaluation.epipolar import (
    FundamentalGT,
    RansacConfig,
    enforce_rank2,
    estimate_fundamental_ransac,
    fundamental_from_pose,
    pose_recall,
    symmetric_epipolar_distance,
    virtual_correspondences,
)
from deformfeat.evaluation.homography import (
    HomographyGT,
    correct_matches,
    matching_score,
    mma,
    mma_curve,
    repeatability,
    warp_homography,
)
from deformfeat.evaluation.matching import MatchSet, match_descriptors
from deformfeat.evaluation.report import EpipolarPairResult, EvalReport, HomographyPairResult
from deformfeat.evaluation.runner import PairRunner
from deformfeat.losses.correspondences import warp_points_depth
from deformfeat.losses.synthetic import random_camera_pair, unit_descriptors


def inside_points(rng: np.random.Generator, count: int, size=(128, 96), margin: float = 20.0) -> np.ndarray:
    width, height = size
    return rng.uniform([margin, margin], [width - 1 - margin, height - 1 - margin], size=(count, 2))


def identity_matches(count: int) -> MatchSet:
    return match_descriptors(np.eye(count), np.eye(count), ratio=1.0)


def shifted_gt(dx: float = 3.0, dy: float = -2.0, size=(128, 96)) -> HomographyGT:
    return HomographyGT(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]), size, size)


def epipolar_scene(rng: np.random.Generator, inliers: int = 300, outliers: int = 100):
    """Camera pair on a non-planar scene, exact correspondences and random outliers."""
    cam = random_camera_pair(rng)
    cam = replace(cam, depth=cam.depth * rng.uniform(0.7, 1.3, size=cam.depth.shape))
    width, height = cam.source_size
    pairs = warp_points_depth(rng.uniform([0, 0], [width - 1, height - 1], size=(2000, 2)), cam)
    a, b = pairs.valid_pairs()
    a, b = a[:inliers], b[:inliers]
    noise_a = rng.uniform([0, 0], [width - 1, height - 1], size=(outliers, 2))
    noise_b = rng.uniform([0, 0], [width - 1, height - 1], size=(outliers, 2))
    return cam, np.concatenate([a, noise_a]), np.concatenate([b, noise_b])


class TestMatching:
    """Tests for nearest-neighbour matching."""

    def test_self_match_is_complete(self, rng):
        """Test matching a set against itself with ratio 1.0 pairs every descriptor with itself."""
        desc = unit_descriptors(rng, 50, 128)
        matches = match_descriptors(desc, desc, ratio=1.0)
        assert len(matches) == 50
        np.testing.assert_array_equal(matches.index_pairs(), np.stack([np.arange(50)] * 2, axis=1))
        assert all(m.mutual and m.ratio_passed for m in matches.matches)

    def test_empty_input(self, rng):
        """Test an empty side gives no matches and zero counts."""
        matches = match_descriptors(np.zeros((0, 128)), unit_descriptors(rng, 5, 128))
        assert len(matches) == 0
        assert matches.candidates == 0
        assert matches.index_pairs().shape == (0, 2)

    def test_stricter_ratio_is_subset(self, rng):
        """Test ratio 0.8 keeps a subset of the matches kept at 1.0."""
        a = unit_descriptors(rng, 80, 32)
        b = unit_descriptors(rng, 90, 32)
        loose = {(m.index_a, m.index_b) for m in match_descriptors(a, b, ratio=1.0).matches}
        strict = {(m.index_a, m.index_b) for m in match_descriptors(a, b, ratio=0.8).matches}
        assert strict <= loose

    def test_mutual_filter(self):
        """Test two queries sharing a nearest neighbour keep only the mutual one."""
        a = np.array([[1.0, 0.0], [0.9, 0.1]])
        b = np.array([[1.0, 0.0], [-1.0, 0.0]])
        mutual = match_descriptors(a, b, ratio=1.0)
        assert [(m.index_a, m.index_b) for m in mutual.matches] == [(0, 0)]
        assert mutual.after_ratio == 2
        assert mutual.after_mutual == 1
        assert len(match_descriptors(a, b, ratio=1.0, mutual=False)) == 2

    def test_single_candidate_skips_ratio(self):
        """Test the ratio test is skipped when B has one descriptor."""
        matches = match_descriptors(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), ratio=0.5)
        assert len(matches) == 1

    def test_ratio_range(self):
        """Test ratios outside (0, 1] raise."""
        with pytest.raises(ValueError):
            match_descriptors(np.eye(2), np.eye(2), ratio=1.5)

    def test_with_inliers(self):
        """Test the inlier mask is attached per match."""
        flagged = identity_matches(3).with_inliers(np.array([True, False, True]))
        assert [m.inlier for m in flagged.matches] == [True, False, True]


class TestHomographyMetrics:
    """Tests for repeatability, matching score and MMA."""

    def test_closed_loop_is_perfect(self, rng):
        """Test exactly warped keypoints with identity matches score 100 everywhere."""
        gt = shifted_gt()
        points_a = inside_points(rng, 40)
        points_b, _ = warp_homography(points_a, gt.matrix)
        matches = identity_matches(40)

        assert repeatability(points_a, points_b, gt) == pytest.approx(100.0)
        assert matching_score(matches, points_a, points_b, gt) == pytest.approx(100.0)
        assert all(v == pytest.approx(100.0) for v in mma_curve(matches, points_a, points_b, gt).values())

    def test_empty_denominators_are_none(self):
        """Test metrics without keypoints or matches are None, not 0."""
        gt = shifted_gt()
        empty = np.zeros((0, 2))
        assert repeatability(empty, empty, gt) is None
        assert matching_score(MatchSet(), empty, empty, gt) is None
        assert mma(MatchSet(), empty, empty, gt) is None

    def test_mma_curve_monotone(self, rng):
        """Test MMA never decreases with the pixel threshold."""
        gt = shifted_gt()
        points_a = inside_points(rng, 60)
        points_b, _ = warp_homography(points_a, gt.matrix)
        points_b = points_b + rng.normal(scale=4.0, size=points_b.shape)
        curve = list(mma_curve(identity_matches(60), points_a, points_b, gt).values())
        assert list(mma_curve(identity_matches(60), points_a, points_b, gt)) == list(range(1, 11))
        assert all(x <= y for x, y in zip(curve, curve[1:]))
        assert curve[0] < 100.0

    def test_threshold_is_strict(self):
        """Test a match exactly at the threshold is not correct."""
        gt = shifted_gt(0.0, 0.0)
        points_a = np.array([[30.0, 30.0]])
        points_b = np.array([[33.0, 30.0]])
        assert not correct_matches(identity_matches(1), points_a, points_b, gt, 3.0).any()
        assert correct_matches(identity_matches(1), points_a, points_b, gt, 3.5).all()

    def test_outside_points_ignored(self):
        """Test keypoints warping outside the other image leave the denominator."""
        gt = shifted_gt(100.0, 0.0)
        points_a = np.array([[10.0, 10.0], [60.0, 10.0]])  # second lands at x = 160
        points_b, _ = warp_homography(points_a, gt.matrix)
        points_b[1] = [20.0, 50.0]
        assert repeatability(points_a, points_b, gt) == pytest.approx(100.0)

    def test_partial_repeatability(self):
        """Test 6 of 10 keypoints within threshold give 60%."""
        gt = shifted_gt(0.0, 0.0)
        points_a = np.array([[10.0 * (i + 1), 20.0] for i in range(10)])
        points_b = points_a.copy()
        points_b[6:, 1] = 70.0
        assert repeatability(points_a, points_b, gt) == pytest.approx(60.0)

    def test_disjoint_keypoints(self):
        """Test keypoints farther apart than the threshold give 0%."""
        gt = shifted_gt(0.0, 0.0)
        points_a = np.array([[10.0, 10.0], [50.0, 10.0]])
        points_b = points_a + [0.0, 40.0]
        assert repeatability(points_a, points_b, gt) == 0.0
        assert mma(identity_matches(2), points_a, points_b, gt) == 0.0

    def test_fixed_error_curve(self, rng):
        """Test a constant 2.5 px error is wrong below 3 px and correct from 3 px on."""
        gt = shifted_gt(0.0, 0.0)
        points_a = inside_points(rng, 10)
        curve = mma_curve(identity_matches(10), points_a, points_a + [2.5, 0.0], gt)
        assert curve[1] == 0.0
        assert curve[2] == 0.0
        assert all(curve[t] == 100.0 for t in range(3, 11))

    def test_point_at_infinity(self):
        """Test unmappable points are flagged invalid."""
        H = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
        warped, valid = warp_homography(np.array([[-1.0, 5.0], [2.0, 5.0]]), H)
        assert valid.tolist() == [False, True]
        assert np.isnan(warped[0]).all()

    def test_singular_ground_truth(self):
        """Test a non-invertible homography is rejected."""
        with pytest.raises(NumericError):
            HomographyGT(np.zeros((3, 3)), (10, 10), (10, 10))


class TestEpipolar:
    """Tests for symmetric epipolar distance, RANSAC and pose recall."""

    def test_exact_correspondences(self, rng):
        """Test depth-warped correspondences have near-zero SED under the pose F."""
        cam, xa, xb = epipolar_scene(rng, outliers=0)
        size = cam.source_size
        distances, degenerate = symmetric_epipolar_distance(xa, xb, fundamental_from_pose(cam), size, size)
        assert len(distances) == 300
        assert distances.mean() < 1e-10
        assert not degenerate.any()

    def test_ransac_recovers_inliers(self, rng):
        """Test RANSAC separates 300 inliers from 100 random outliers."""
        cam, xa, xb = epipolar_scene(rng)
        size = cam.source_size
        result = estimate_fundamental_ransac(xa, xb, size, size, RansacConfig(seed=3))

        assert result.success
        assert result.inliers[:300].mean() >= 0.95
        assert result.inliers[300:].mean() < 0.2
        singular = np.linalg.svd(result.F, compute_uv=False)
        assert singular[2] / singular[0] < 1e-6
        assert pose_recall([result.F], [virtual_correspondences(cam, rng=rng)]).recall == 100.0

    def test_seven_point_sampler(self, rng):
        """Test the 7-point minimal solver also converges."""
        cam, xa, xb = epipolar_scene(rng, outliers=50)
        size = cam.source_size
        result = estimate_fundamental_ransac(xa, xb, size, size, RansacConfig(seed=1, minimal_solver="seven"))
        assert result.success
        assert result.inliers[:300].mean() >= 0.95

    def test_default_samples_eight(self, rng, mocker):
        """Test default hypotheses come from 8-point samples and the 8-point solve."""
        eight = mocker.spy(epipolar, "eight_point")
        seven = mocker.spy(epipolar, "seven_point")
        cam, xa, xb = epipolar_scene(rng, outliers=20)
        size = cam.source_size

        estimate_fundamental_ransac(xa, xb, size, size, RansacConfig(seed=2, iterations=5))

        assert RansacConfig().sample_size == 8
        assert seven.call_count == 0
        assert len(eight.call_args_list[0].args[0]) == 8

    def test_ransac_deterministic(self, rng):
        """Test a fixed seed gives the same inliers."""
        cam, xa, xb = epipolar_scene(rng)
        size = cam.source_size
        first = estimate_fundamental_ransac(xa, xb, size, size, RansacConfig(seed=5))
        second = estimate_fundamental_ransac(xa, xb, size, size, RansacConfig(seed=5))
        np.testing.assert_array_equal(first.inliers, second.inliers)

    def test_distance_symmetry(self, rng):
        """Test swapping the images and transposing F leaves SED unchanged."""
        F = enforce_rank2(rng.normal(size=(3, 3)))
        xa = rng.uniform(0, 100, size=(20, 2))
        xb = rng.uniform(0, 80, size=(20, 2))
        forward, _ = symmetric_epipolar_distance(xa, xb, F, (100, 90), (80, 70))
        backward, _ = symmetric_epipolar_distance(xb, xa, F.T, (80, 70), (100, 90))
        np.testing.assert_allclose(forward, backward, rtol=1e-10)

    def test_noiseless_all_inliers(self, rng):
        """Test 100 exact correspondences are all inliers with negligible residual."""
        cam, xa, xb = epipolar_scene(rng, inliers=100, outliers=0)
        size = cam.source_size
        result = estimate_fundamental_ransac(xa, xb, size, size, RansacConfig(iterations=100))
        assert result.inliers.all()
        residual, _ = symmetric_epipolar_distance(xa, xb, result.F, size, size)
        assert residual.mean() < 1e-8

    def test_too_few_matches(self):
        """Test fewer than 8 matches fail without raising."""
        result = estimate_fundamental_ransac(np.zeros((5, 2)), np.zeros((5, 2)), (10, 10), (10, 10))
        assert not result.success
        assert result.F is None
        assert result.inlier_count == 0

    def test_ransac_config_validated(self):
        """Test bad RANSAC settings raise."""
        with pytest.raises(ValueError):
            RansacConfig(iterations=0)
        with pytest.raises(ValueError):
            RansacConfig(minimal_solver="five")

    def test_recall_counts_failures(self, rng):
        """Test a failed estimate counts as a miss with infinite error."""
        cam = random_camera_pair(rng)
        virtual = virtual_correspondences(cam, count=50, rng=rng)
        summary = pose_recall([fundamental_from_pose(cam), None], [virtual, virtual])
        assert summary.recall == 50.0
        assert summary.recalled == 1
        assert math.isinf(summary.errors[1])

    def test_virtual_from_matrix_lie_on_lines(self, rng):
        """Test F-only virtual correspondences satisfy the epipolar constraint."""
        cam = random_camera_pair(rng)
        gt = FundamentalGT(fundamental_from_pose(cam), cam.source_size, cam.target_size)
        virtual = virtual_correspondences(gt, count=100, rng=rng)
        distances, _ = symmetric_epipolar_distance(virtual.points_a, virtual.points_b, gt.matrix, gt.size_a, gt.size_b)
        assert distances.max() < 1e-12

    def test_rank_three_rejected(self, rng):
        """Test a full-rank ground truth raises ValueError."""
        with pytest.raises(ValueError):
            FundamentalGT(np.eye(3), (10, 10), (10, 10))
        assert FundamentalGT(enforce_rank2(rng.normal(size=(3, 3))), (10, 10), (10, 10))


class TestDatasets:
    """Tests for dataset discovery and pair lists."""

    @pytest.fixture
    def sequence(self, tmp_path):
        """A sequence dir with images 1-3 and only H_1_2."""
        root = tmp_path / "v_test"
        root.mkdir()
        for i in (1, 2, 3):
            (root / f"{i}.pgm").write_bytes(b"")
        (root / "H_1_2").write_text("1 0 0\n0 1 0\n0 0 1\n")
        return root

    def test_pairs_and_skips(self, sequence):
        """Test a missing homography file is counted as skipped."""
        pairs, skipped = HPatchesSequence(sequence).pairs()
        assert [p.name for p in pairs] == ["v_test/1-2"]
        assert skipped == 1

    def test_discover_root_or_children(self, sequence):
        """Test discovery accepts a sequence or a directory of sequences."""
        assert [s.name for s in discover_sequences(sequence)] == ["v_test"]
        assert [s.name for s in discover_sequences(sequence.parent)] == ["v_test"]

    def test_discover_missing(self, tmp_path):
        """Test a missing root raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            discover_sequences(tmp_path / "nope")

    def test_read_matrix(self, sequence, tmp_path):
        """Test 3x3 matrices parse and malformed ones raise FormatError."""
        np.testing.assert_array_equal(read_matrix(sequence / "H_1_2"), np.eye(3))
        bad = tmp_path / "bad"
        bad.write_text("1 2 3\n")
        with pytest.raises(FormatError):
            read_matrix(bad)

    def test_pair_list(self, tmp_path):
        """Test pair lists resolve paths against their directory and skip comments."""
        listing = tmp_path / "pairs.txt"
        listing.write_text("# header\n\na.pgm b.pgm F_ab\n")
        pairs = read_pair_list(listing)
        assert len(pairs) == 1
        assert pairs[0].image_a == tmp_path / "a.pgm"
        assert pairs[0].name == "a.pgm-b.pgm"

    def test_pair_list_bad_line(self, tmp_path):
        """Test a line with two fields raises FormatError."""
        listing = tmp_path / "pairs.txt"
        listing.write_text("a.pgm b.pgm\n")
        with pytest.raises(FormatError):
            read_pair_list(listing)


class TestReport:
    """Tests for report rows, summaries and rendering."""

    def test_hpatches_summary_skips_none(self):
        """Test absent metrics are excluded from means."""
        report = EvalReport(
            "hpatches",
            [
                HomographyPairResult("s/1-2", 10, 10, 5, 80.0, 40.0, {1: 20.0}),
                HomographyPairResult("s/1-3", 0, 10, 0, None, None, {1: None}),
            ],
            skipped=1,
        )
        summary = report.summary()
        assert summary["rep"] == 80.0
        assert summary["mma@1"] == 20.0
        assert summary["skipped"] == 1

    def test_epipolar_summary(self):
        """Test recall is the percentage of recalled pairs."""
        report = EvalReport(
            "epipolar",
            [
                EpipolarPairResult("a-b", True, 0.01, 60.0, 90.0, 100, 50),
                EpipolarPairResult("c-d", False, math.inf, None, None, 3, 0, failed=True),
            ],
        )
        assert report.summary()["recall"] == 50.0

    def test_tsv_format(self):
        """Test TSV has a header, NA for None and inf for failures."""
        report = EvalReport("epipolar", [EpipolarPairResult("c-d", False, math.inf, None, None, 3, 0, True)])
        lines = report.to_tsv().splitlines()
        assert lines[0].split("\t") == ["pair", "recalled", "sed", "inlier", "inlier_m", "corrs", "corrs_m", "failed"]
        assert lines[1].split("\t") == ["c-d", "0", "inf", "NA", "NA", "3", "0", "1"]

    def test_empty_report(self, tmp_path):
        """Test an empty report still has a header and renders."""
        report = EvalReport("hpatches")
        path = tmp_path / "r.tsv"
        report.write_tsv(path)
        assert path.read_text().startswith("pair\tkp_a")
        assert "HPatches" in report.render_table()


class TestRunner:
    """Tests for the threaded pair runner."""

    def test_results_in_submission_order(self):
        """Test outcomes keep job order with several threads."""
        outcomes = PairRunner(lambda i, job: job * 2, threads=4).run(list(range(20)))
        assert [o.result for o in outcomes] == [2 * i for i in range(20)]

    def test_error_isolated(self):
        """Test one failing job does not stop the rest and reaches on_error."""
        seen = []
        lock = threading.Lock()

        def work(index, job):
            if job == 3:
                raise FormatError("bad pair")
            if job == 4:
                raise FileNotFoundError("missing image")
            return job

        def on_error(index, error):
            with lock:
                seen.append(index)

        outcomes = PairRunner(work, threads=2, on_error=on_error).run([1, 2, 3, 4, 5])
        assert sorted(seen) == [2, 3]
        assert isinstance(outcomes[2].error, FormatError)
        assert isinstance(outcomes[3].error, FileNotFoundError)
        assert [o.result for o in outcomes if o.error is None] == [1, 2, 5]

    @pytest.mark.parametrize("threads", [1, 3])
    def test_programming_error_propagates(self, threads):
        """Test an exception outside the package hierarchy is not swallowed."""

        def work(index, job):
            if job == 2:
                raise TypeError("unsupported operand")
            return job

        with pytest.raises(TypeError, match="unsupported operand"):
            PairRunner(work, threads=threads).run([1, 2, 3])

    def test_threads_validated(self):
        """Test zero threads raise."""
        with pytest.raises(ValueError):
            PairRunner(lambda i, j: j, threads=0)
