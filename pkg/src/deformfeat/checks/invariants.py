"""Closed-form and oracle checks of every module's invariants."""

import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from deformfeat.checks.registry import CheckOptions, CheckRegistry, expect
from deformfeat.constants import SCORE_MIN
from deformfeat.detection.base import DetectorConfig
from deformfeat.detection.keypoints import edge_eliminate, select_keypoints
from deformfeat.detection.pyramid import build_pyramid, pyramid_level_count
from deformfeat.detection.scores import d2_channel_score, level_score, peakiness_scores, score_hierarchy
from deformfeat.errors import SingularConfigurationError
from deformfeat.evaluation.epipolar import (
    RansacConfig,
    estimate_fundamental_ransac,
    fundamental_from_pose,
    pose_recall,
    symmetric_epipolar_distance,
    virtual_correspondences,
)
from deformfeat.evaluation.homography import HomographyGT, matching_score, mma_curve, repeatability, warp_homography
from deformfeat.evaluation.matching import match_descriptors
from deformfeat.geometry.dlt import SOURCE_CORNERS, dlt_solve
from deformfeat.geometry.transforms import Affine, Homography, Similarity, offsets_from_transform
from deformfeat.losses.contrastive import LossParams, circle_loss, hardest_contrastive, weighted_detection_loss
from deformfeat.losses.correspondences import warp_points_depth
from deformfeat.losses.synthetic import random_camera_pair, random_homography, smooth_image, unit_descriptors
from deformfeat.network.backbone import Backbone, BackboneConfig, architecture_table, dense_descriptors
from deformfeat.network.dcn import ConvLayer, DeformField, conv2d, deform_conv2d, predict_deform_field
from deformfeat.network.variants import DeformVariantRegistry
from deformfeat.numerics.image_io import standardize
from deformfeat.numerics.sampling import bilinear_gather
from deformfeat.numerics.tensor import Precision, as_tensor
from deformfeat.numerics.weights import read_weights, seeded_random_weights, write_weights

# === numerics ===


@CheckRegistry.register("numerics", "bilinear")
def check_bilinear(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    t = rng.normal(size=(5, 6, 3))
    ys, xs = np.mgrid[0:5, 0:6]
    expect(np.array_equal(bilinear_gather(t, xs.astype(float), ys.astype(float)), t), "integer samples differ from pixels")
    midpoint = bilinear_gather(t, np.array([2.5]), np.array([1.5]))[0]
    expected = t[1:3, 2:4].mean(axis=(0, 1))
    expect(np.allclose(midpoint, expected, atol=1e-12), "cell midpoint is not the mean of its corners")
    clamped = bilinear_gather(t, np.array([-3.0, 9.0]), np.array([-1.0, 7.0]))
    expect(np.allclose(clamped, [t[0, 0], t[4, 5]]), "out-of-range samples are not clamped to the border")
    return "integer, midpoint and border samples exact"


@CheckRegistry.register("numerics", "standardize")
def check_standardize(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    out = standardize(rng.uniform(size=(12, 9, 1)), Precision.FLOAT64)
    expect(abs(out.mean()) < 1e-9 and abs(out.std() - 1.0) < 1e-9, "standardized image is not zero-mean unit-std")
    flat = standardize(np.full((4, 4, 1), 0.3), Precision.FLOAT64)
    expect(np.all(flat == 0.0), "constant image does not standardize to zeros")
    return "moments exact, constant image maps to zeros"


@CheckRegistry.register("numerics", "weights_roundtrip")
def check_weights_roundtrip(options: CheckOptions) -> str:
    table = architecture_table(BackboneConfig())
    store = seeded_random_weights(options.seed, table)
    expect(store == seeded_random_weights(options.seed, table), "seeded weights are not reproducible")
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "weights.aslw"
        write_weights(store, path)
        expect(read_weights(path, table) == store, "weight file round trip changed values")
    return f"{store.parameter_count()} parameters round-trip"


# === geometry ===


@CheckRegistry.register("geometry", "dlt_roundtrip")
def check_dlt_roundtrip(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    worst = 0.0
    for _ in range(options.homographies):
        H = np.eye(3)
        H[:2, :2] += rng.uniform(-0.2, 0.2, size=(2, 2))
        H[2, :2] = rng.uniform(-0.15, 0.15, size=2)
        corners, _ = warp_homography(SOURCE_CORNERS, H)
        recovered = dlt_solve((corners - SOURCE_CORNERS).ravel())
        worst = max(worst, float(np.max(np.abs(recovered - H))))
    expect(worst <= 1e-6, f"DLT recovered homographies off by {worst:.2e}")

    collinear = np.array([[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0], [-1.0, 1.0]])
    try:
        dlt_solve((collinear - SOURCE_CORNERS).ravel())
        rejected = False
    except SingularConfigurationError:
        rejected = True
    expect(rejected, "collinear corners were accepted")
    return f"{options.homographies} homographies within {worst:.1e}, collinear corners rejected"


@CheckRegistry.register("geometry", "identity_transforms")
def check_identity_transforms(options: CheckOptions) -> str:
    for transform in (Similarity(), Affine(), Homography()):
        offsets = offsets_from_transform(transform, 3)
        expect(np.allclose(offsets, 0.0, atol=1e-12), f"{type(transform).__name__} identity moves the grid")
    return "identity parameters give zero offsets"


# === dcn ===


@CheckRegistry.register("dcn", "regular_reduction")
def check_regular_reduction(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    worst = 0.0
    for _ in range(options.draws):
        height, width = rng.integers(3, 10, size=2)
        c_in, c_out = rng.integers(1, 5, size=2)
        x = as_tensor(rng.normal(size=(height, width, c_in)))
        layer = ConvLayer(
            kernel=rng.normal(size=(3, 3, c_in, c_out)).astype(np.float32),
            bias=rng.normal(size=c_out).astype(np.float32),
            stride=int(rng.integers(1, 3)),
        )
        out_h, out_w = layer.output_size(height, width)
        deform = DeformField(offsets=np.zeros((out_h, out_w, 18)), modulation=np.full((out_h, out_w, 9), 0.5))
        expected = 0.5 * conv2d(x, layer, epilogue=False).astype(np.float64)
        actual = deform_conv2d(x, layer, deform, epilogue=False).astype(np.float64)
        scale = max(float(np.max(np.abs(expected))), 1e-12)
        worst = max(worst, float(np.max(np.abs(actual - expected))) / scale)
    expect(worst < 1e-5, f"zero-offset deformable convolution differs by {worst:.2e}")
    return f"{options.draws} draws, max rel error {worst:.1e}"


@CheckRegistry.register("dcn", "variant_parameters")
def check_variant_parameters(options: CheckOptions) -> str:
    expected = {"free": 18, "similarity": 3, "affine": 6, "homography": 8}
    for name, count in expected.items():
        actual = DeformVariantRegistry.create(name).parameter_count(3)
        expect(actual == count, f"{name} predicts {actual} parameters, expected {count}")
    return ", ".join(f"{name}={count}" for name, count in expected.items())


@CheckRegistry.register("dcn", "zero_predictor")
def check_zero_predictor(options: CheckOptions) -> str:
    x = as_tensor(np.random.default_rng(options.seed).normal(size=(6, 5, 2)))
    for variant in ("similarity", "affine", "homography"):
        channels = DeformVariantRegistry.create(variant).parameter_count(3) + 9
        predictor = ConvLayer(kernel=np.zeros((3, 3, 2, channels), dtype=np.float32), bias=np.zeros(channels))
        deform = predict_deform_field(x, predictor, variant)
        expect(np.allclose(deform.offsets, 0.0, atol=1e-12), f"{variant}: zero predictor moves the grid")
        expect(np.allclose(deform.modulation, 0.5), f"{variant}: zero logits do not give modulation 0.5")
    return "zero predictors give the regular grid with modulation 0.5"


# === backbone ===


@CheckRegistry.register("backbone", "forward_shapes")
def check_forward_shapes(options: CheckOptions) -> str:
    cfg = BackboneConfig()
    backbone = Backbone(cfg, seeded_random_weights(options.seed, architecture_table(cfg)))
    image = standardize(smooth_image(np.random.default_rng(options.seed), (37, 30)))
    hierarchy = backbone.forward(image)
    shapes = {level.name: level.tensor.shape for level in hierarchy.levels}
    expect(shapes["conv1"][:2] == (30, 37), f"conv1 shape {shapes['conv1']}")
    expect(shapes["conv3"][:2] == (15, 19), f"conv3 shape {shapes['conv3']}")
    expect(shapes["conv8"] == (8, 10, 128), f"conv8 shape {shapes['conv8']}")
    expect(np.array_equal(backbone.forward(image).conv8, hierarchy.conv8), "forward pass is not deterministic")
    dense = dense_descriptors(hierarchy)
    norms = np.linalg.norm(dense.values.astype(np.float64), axis=-1)
    expect(np.allclose(norms[~dense.degenerate], 1.0, atol=1e-5), "dense descriptors are not unit norm")
    return ", ".join(f"{name} {shape}" for name, shape in shapes.items())


# === detector ===


def _clamped(y: np.ndarray, i: int, j: int) -> np.ndarray:
    return y[min(max(i, 0), y.shape[0] - 1), min(max(j, 0), y.shape[1] - 1)]


def _score_oracle(y: np.ndarray, scoring: str, dilation: int) -> np.ndarray:
    """Per-position loop over the neighborhood, channel by channel."""
    height, width, channels = y.shape
    out = np.zeros((height, width))
    for i in range(height):
        for j in range(width):
            neighbours = [
                _clamped(y, i + di * dilation, j + dj * dilation) for di in (-1, 0, 1) for dj in (-1, 0, 1)
            ]
            best = -math.inf
            for c in range(channels):
                value = y[i, j, c]
                column = [n[c] for n in neighbours]
                if scoring == "peakiness":
                    beta = math.log1p(math.exp(value - y[i, j].mean()))
                    alpha = math.log1p(math.exp(value - sum(column) / 9.0))
                else:
                    top = y[i, j].max()
                    beta = value / top if top > 0 else 0.0
                    alpha = math.exp(value) / sum(math.exp(v) for v in column)
                best = max(best, alpha * beta)
            out[i, j] = best
    return out


@CheckRegistry.register("detector", "score_oracles")
def check_score_oracles(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    worst = 0.0
    for scoring in ("peakiness", "d2net-ratio"):
        for dilation in (1, 2):
            y = rng.normal(size=(8, 8, 4))
            fast = level_score(y, scoring, dilation).plane
            worst = max(worst, float(np.max(np.abs(fast - _score_oracle(y, scoring, dilation)))))
    expect(worst <= 1e-6, f"vectorized scores differ from the loop oracle by {worst:.2e}")

    constant = np.full((6, 6, 4), 2.5)
    alpha, beta = peakiness_scores(constant)
    ln2 = math.log(2.0)
    expect(np.allclose(alpha, ln2, atol=1e-6) and np.allclose(beta, ln2, atol=1e-6), "constant input misses ln 2")
    score = level_score(constant, "peakiness").plane
    expect(np.allclose(score, ln2 * ln2, atol=1e-6), "constant input misses (ln 2)^2")
    expect(np.all(score < SCORE_MIN), "uniform regions pass the keep threshold")
    _, degenerate = d2_channel_score(-np.abs(constant))
    expect(bool(np.all(degenerate)), "non-positive channel maxima are not flagged")
    return f"loop oracles within {worst:.1e}, constant fixed point (ln 2)^2"


def _quadratic_peak(dxx: float, dyy: float) -> np.ndarray:
    ys, xs = np.mgrid[-2:3, -2:3].astype(np.float64)
    return 1.0 + 0.5 * dxx * xs * xs + 0.5 * dyy * ys * ys


@CheckRegistry.register("detector", "edge_rule")
def check_edge_rule(options: CheckOptions) -> str:
    expect(edge_eliminate(_quadratic_peak(-2.0, -2.0), 2, 2, 10.0), "isotropic peak rejected")
    expect(not edge_eliminate(_quadratic_peak(-10.0, -0.1), 2, 2, 10.0), "ridge kept")
    expect(not edge_eliminate(_quadratic_peak(-2.0, 2.0), 2, 2, 10.0), "saddle kept")
    return "diag(-2,-2) kept, diag(-10,-0.1) and saddle rejected"


@CheckRegistry.register("detector", "shift_covariance")
def check_shift_covariance(options: CheckOptions) -> str:
    shift, side, interior = 8, 176, 40
    cfg = BackboneConfig()
    backbone = Backbone(cfg, seeded_random_weights(options.seed, architecture_table(cfg)))
    detector = DetectorConfig(score_min=0.0, top_k=10_000)
    canvas = standardize(smooth_image(np.random.default_rng(options.seed), (side + shift, side + shift), blobs=160))

    def detect(tensor: np.ndarray) -> np.ndarray:
        hierarchy = backbone.forward(np.ascontiguousarray(tensor))
        keypoints = select_keypoints(score_hierarchy(hierarchy, detector, side, side), detector)
        return np.array([[kp.x, kp.y] for kp in keypoints]).reshape(-1, 2)

    # crop B shows the scene of crop A moved by (shift, shift)
    points_a = detect(canvas[shift:, shift:])
    points_b = detect(canvas[:side, :side])
    inside = np.all((points_a >= interior) & (points_a < side - shift - interior), axis=1)
    expect(bool(inside.any()), "no interior keypoints detected")
    expect(points_b.size > 0, "shifted crop gave no keypoints")
    moved = points_a[inside] + shift
    distances = np.min(np.max(np.abs(moved[:, None, :] - points_b[None, :, :]), axis=2), axis=1)
    stray = int(np.sum(~(distances <= 0.25)))
    expect(stray == 0, f"{stray}/{moved.shape[0]} interior keypoints did not follow the shift")
    return f"all {moved.shape[0]} interior keypoints moved by ({shift}, {shift}), worst {float(distances.max()):.1e} px"


@CheckRegistry.register("detector", "pyramid_levels")
def check_pyramid_levels(options: CheckOptions) -> str:
    # a horizontal ramp stores each pixel's own x, which blur and resize keep linear
    ramp = np.tile(np.arange(512, dtype=np.float64), (512, 1))[..., None]
    levels = build_pyramid(ramp)
    expect(len(levels) == 5, f"512x512 input gave {len(levels)} levels, expected 5")
    expect(pyramid_level_count(512, 512) == 5, "level count formula disagrees with the pyramid")
    worst = 0.0
    for k, level in enumerate(levels):
        expect(abs(level.scale - 2.0 ** (-k / 2)) <= 1e-12, f"level {k} has scale {level.scale}")
        expect(level.tensor.shape[0] == round(512 * level.scale), f"level {k} has size {level.tensor.shape[:2]}")
        columns = np.arange(level.tensor.shape[1], dtype=np.float64)
        mapped, _ = level.to_image(columns, np.zeros_like(columns))
        interior = (mapped > 64) & (mapped < 448)
        row = level.tensor[level.tensor.shape[0] // 2, :, 0]
        worst = max(worst, float(np.abs(row[interior] - mapped[interior]).max()))
        back, _ = level.to_level(mapped, np.zeros_like(mapped))
        expect(np.allclose(back, columns, atol=1e-9), f"level {k} coordinate maps are not inverse")
    expect(worst <= 1e-6, f"level coordinates map back with error {worst:.2e}")
    return f"sizes {[level.tensor.shape[0] for level in levels]}, map error {worst:.1e}"


# === match ===


def _inside_points(rng: np.random.Generator, count: int, size: tuple[int, int], margin: float) -> np.ndarray:
    width, height = size
    return rng.uniform([margin, margin], [width - margin, height - margin], size=(count, 2))


@CheckRegistry.register("match", "homography_closed_loop")
def check_homography_closed_loop(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    size = (320, 240)
    gt = HomographyGT(random_homography(rng, size, 0.08), size, size)
    points_a = _inside_points(rng, 150, size, 40.0)
    points_b, _ = warp_homography(points_a, gt.matrix)
    descriptors = unit_descriptors(rng, len(points_a), 128)
    matches = match_descriptors(descriptors, descriptors, ratio=0.8)
    rep = repeatability(points_a, points_b, gt)
    score = matching_score(matches, points_a, points_b, gt)
    at3 = mma_curve(matches, points_a, points_b, gt)[3]
    expect(rep == 100.0 and score == 100.0 and at3 == 100.0, f"Rep {rep}, M.S. {score}, MMA@3 {at3}")
    return "Rep = M.S. = MMA@3 = 100%"


def _repeatability_oracle(points_a: np.ndarray, points_b: np.ndarray, gt: HomographyGT, threshold: float) -> float | None:
    H, H_inv = gt.matrix, np.linalg.inv(gt.matrix)

    def project(p: np.ndarray, M: np.ndarray) -> np.ndarray:
        q = M @ np.array([p[0], p[1], 1.0])
        return q[:2] / q[2]

    def inside(p: np.ndarray, size: tuple[int, int]) -> bool:
        return 0 <= p[0] < size[0] and 0 <= p[1] < size[1]

    shared_a = [p for p in points_a if inside(project(p, H), gt.target_size)]
    shared_b = [q for q in points_b if inside(project(q, H_inv), gt.source_size)]
    denominator = min(len(shared_a), len(shared_b))
    if denominator == 0:
        return None
    forward = sum(1 for p in shared_a if any(np.linalg.norm(project(p, H) - q) <= threshold for q in shared_b))
    backward = sum(1 for q in shared_b if any(np.linalg.norm(project(q, H_inv) - p) <= threshold for p in shared_a))
    return 100.0 * min(forward, backward, denominator) / denominator


@CheckRegistry.register("match", "metric_oracles")
def check_metric_oracles(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    size = (160, 120)
    gt = HomographyGT(random_homography(rng, size, 0.1), size, size)
    points_a = _inside_points(rng, 120, size, 0.0)
    points_b = _inside_points(rng, 100, size, 0.0)
    fast = repeatability(points_a, points_b, gt, 3.0)
    slow = _repeatability_oracle(points_a, points_b, gt, 3.0)
    expect(fast == slow, f"repeatability {fast} differs from oracle {slow}")

    desc_a, desc_b = unit_descriptors(rng, 120, 16), unit_descriptors(rng, 100, 16)
    matches = match_descriptors(desc_a, desc_b, ratio=1.0)
    curve = [v for v in mma_curve(matches, points_a, points_b, gt).values() if v is not None]
    expect(all(x <= y for x, y in zip(curve, curve[1:])), "MMA curve is not monotone")
    strict = {tuple(p) for p in match_descriptors(desc_a, desc_b, ratio=0.8).index_pairs()}
    loose = {tuple(p) for p in matches.index_pairs()}
    expect(strict <= loose, "ratio 0.8 kept matches that ratio 1.0 rejected")
    return f"repeatability matches oracle ({fast}), MMA monotone, ratio filter monotone"


@CheckRegistry.register("match", "epipolar_closed_loop")
def check_epipolar_closed_loop(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    cam = random_camera_pair(
        rng, rotation_deg=options.rotation_deg, translation=options.translation, depth_range=options.depth_range
    )
    # non-planar scene keeps the fundamental matrix well determined
    cam = replace(cam, depth=cam.depth * rng.uniform(0.7, 1.3, size=cam.depth.shape))
    size = cam.source_size
    F = fundamental_from_pose(cam)

    width, height = size
    pairs = warp_points_depth(rng.uniform([0, 0], [width - 1, height - 1], size=(2000, 2)), cam)
    inliers_a, inliers_b = pairs.valid_pairs()
    inliers_a, inliers_b = inliers_a[:300], inliers_b[:300]
    expect(len(inliers_a) == 300, f"only {len(inliers_a)} valid synthetic correspondences")
    exact, _ = symmetric_epipolar_distance(inliers_a, inliers_b, F, size, size)
    expect(float(exact.mean()) < 1e-10, f"exact correspondences have mean SED {exact.mean():.2e}")

    outliers = 450
    xa = np.concatenate([inliers_a, rng.uniform([0, 0], [width - 1, height - 1], size=(outliers, 2))])
    xb = np.concatenate([inliers_b, rng.uniform([0, 0], [width - 1, height - 1], size=(outliers, 2))])
    result = estimate_fundamental_ransac(xa, xb, size, size, RansacConfig(seed=options.seed))
    expect(result.success, f"RANSAC failed: {result.message}")
    recovered = float(result.inliers[:300].mean())
    expect(recovered >= 0.95, f"RANSAC recovered {recovered:.0%} of true inliers")
    summary = pose_recall([result.F], [virtual_correspondences(cam, rng=rng)])
    expect(summary.recall == 100.0, f"pose recall {summary.recall}% (error {summary.errors[0]:.2e})")
    return f"mean exact SED {exact.mean():.1e}, {recovered:.0%} inliers recovered, recall 100%"


# === loss ===


@CheckRegistry.register("loss", "hardest_fixed_points")
def check_hardest_fixed_points(options: CheckOptions) -> str:
    params = LossParams()
    expect(
        (params.margin_positive, params.margin_negative, params.circle_margin, params.circle_gamma)
        == (0.2, 1.0, 0.1, 512.0),
        "loss defaults are not m_p=0.2, m_n=1.0, m=0.1, gamma=512",
    )
    inactive = hardest_contrastive(
        np.array([[0.0, 0.0], [1.3, 0.0]]), np.array([[0.1, 0.0], [1.4, 0.0]])
    )
    expect(abs(inactive.loss) <= 1e-12, f"inactive hinges give {inactive.loss}")
    active = hardest_contrastive(
        np.array([[0.0, 0.0], [0.0, 0.9]]), np.array([[0.5, 0.0], [0.0, 0.4]])
    )
    expect(abs(active.per_pair[0] - 0.9) <= 1e-12, f"0.5/0.4 case gives {active.per_pair[0]}")
    return "inactive hinges give 0, 0.5/0.4 case gives 0.9"


@CheckRegistry.register("loss", "circle_fixed_points")
def check_circle_fixed_points(options: CheckOptions) -> str:
    # one eligible negative per anchor: the a-side cells coincide
    cells_a = np.zeros((2, 2))
    cells_b = np.array([[0.0, 0.0], [10.0, 10.0]])
    boundary_b = np.array([[0.9, 0.1, math.sqrt(0.18), 0.0], [0.1, 0.9, 0.0, math.sqrt(0.18)]])
    boundary = circle_loss(np.eye(2, 4), boundary_b, cells_a, cells_b)
    expect(abs(boundary.loss - math.log(2.0)) <= 1e-9, f"boundary case gives {boundary.loss}")

    separated = circle_loss(np.eye(2, 4), np.eye(2, 4), cells_a, cells_b)
    expected = math.log1p(math.exp(-10.24))
    expect(abs(separated.loss - expected) <= 1e-12, f"s_p=1, s_n=0 gives {separated.loss}, expected {expected}")
    return f"boundary log 2, separated case {expected:.2e}"


@CheckRegistry.register("loss", "detection_weighting")
def check_detection_weighting(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed)
    terms = rng.uniform(0.0, 2.0, size=10)
    uniform = weighted_detection_loss(np.ones(10), np.ones(10), terms)
    expect(abs(uniform.loss - terms.mean() / 10) <= 1e-12, "equal scores do not give mean(M) / |C|")

    scores_a, scores_b = rng.uniform(size=10), rng.uniform(size=10)
    total = sum(a * b for a, b in zip(scores_a, scores_b))
    oracle = sum(a * b / total * m for a, b, m in zip(scores_a, scores_b, terms)) / len(terms)
    result = weighted_detection_loss(scores_a, scores_b, terms)
    expect(abs(result.loss - oracle) <= 1e-7, f"weighted loss {result.loss} differs from oracle {oracle}")
    expect(weighted_detection_loss(np.zeros(3), np.ones(3), np.ones(3)).degenerate, "zero products not flagged")
    return "uniform, oracle and degenerate cases hold"
