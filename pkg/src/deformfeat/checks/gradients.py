"""Finite-difference sweeps over every analytic derivative in the package.

Each check evaluates options.points random points in 64-bit precision.
Points on a non-smooth locus (hinge kinks, integer bilinear coordinates,
max/min switches) are redrawn.
"""

from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from deformfeat.checks.registry import CheckOptions, CheckRegistry, expect
from deformfeat.detection.scores import combine_scores, peakiness_score_vjp, peakiness_scores
from deformfeat.geometry.jacobians import jacobian_analytic, op_function, op_jacobian
from deformfeat.geometry.transforms import kernel_grid
from deformfeat.losses.contrastive import (
    LossParams,
    circle_loss,
    hardest_contrastive,
    negative_masks,
    weighted_detection_loss,
)
from deformfeat.losses.gradcheck import gradcheck
from deformfeat.losses.synthetic import matched_descriptors, scattered_cells
from deformfeat.network.dcn import ConvLayer, DeformField, deform_conv2d, deform_conv2d_offset_grad

# Distance to a kink below which a point counts as non-smooth
KINK_MARGIN = 1e-3
# Circle-loss scale used for the sweep; 512 makes central differences too stiff
GRADIENT_CIRCLE_GAMMA = 16.0
MAX_REDRAWS = 20

Sampler = Callable[[np.random.Generator], np.ndarray]


def sweep(
    name: str,
    fn: Callable[[np.ndarray], np.ndarray | float],
    analytic: Callable[[np.ndarray], np.ndarray],
    sample: Sampler,
    options: CheckOptions,
    nonsmooth: Callable[[np.ndarray], bool] | None = None,
) -> str:
    """Run gradcheck at options.points smooth random points."""
    rng = np.random.default_rng(options.seed)
    worst, failed, evaluated, redrawn = 0.0, 0, 0, 0
    while evaluated < options.points:
        report = gradcheck(fn, analytic, sample(rng), name=name, nonsmooth=nonsmooth, threads=options.threads)
        if report.nonsmooth:
            redrawn += 1
            expect(redrawn <= MAX_REDRAWS * options.points, f"{name}: could not draw smooth points")
            continue
        evaluated += 1
        expect(not report.errors, f"{name}: {report.errors[0] if report.errors else ''}")
        worst = max(worst, report.max_abs_error)
        failed += int(not report.passed)
    expect(failed == 0, f"{name}: {failed}/{evaluated} points off, max abs error {worst:.2e}")
    detail = f"{evaluated} points, max abs error {worst:.2e}"
    return detail + (f", {redrawn} non-smooth redrawn" if redrawn else "")


# === geometry ===


def _similarity_params(rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(0.4, 2.7), rng.uniform(-3.0, 3.0)])


def _affine_params(rng: np.random.Generator) -> np.ndarray:
    return np.concatenate([_similarity_params(rng), rng.uniform(-0.8, 0.8, size=3)])


def _corner_params(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.4, 0.4, size=8)


def _perturbed(op: str, variant: str, options: CheckOptions) -> Callable[[np.ndarray], np.ndarray]:
    def jacobian(params: np.ndarray) -> np.ndarray:
        return jacobian_analytic(op, params, variant) + options.perturb_dlt

    return jacobian


@CheckRegistry.register("geometry", "grad_similarity", gradient=True)
def check_similarity_gradient(options: CheckOptions) -> str:
    return sweep("similarity", op_function("similarity"), op_jacobian("similarity"), _similarity_params, options)


@CheckRegistry.register("geometry", "grad_affine", gradient=True)
def check_affine_gradient(options: CheckOptions) -> str:
    return sweep("affine", op_function("affine"), op_jacobian("affine"), _affine_params, options)


@CheckRegistry.register("geometry", "grad_dlt", gradient=True)
def check_dlt_gradient(options: CheckOptions) -> str:
    return sweep(
        "dlt_solve", op_function("dlt_solve"), _perturbed("dlt_solve", "homography", options), _corner_params, options
    )


@CheckRegistry.register("geometry", "grad_offsets", gradient=True)
def check_offsets_gradient(options: CheckOptions) -> str:
    samplers = {"similarity": _similarity_params, "affine": _affine_params, "homography": _corner_params}
    details = []
    for variant, sampler in samplers.items():
        analytic = _perturbed("offsets", variant, options) if variant == "homography" else op_jacobian("offsets", variant)
        detail = sweep(f"offsets[{variant}]", op_function("offsets", variant), analytic, sampler, options)
        details.append(f"{variant}: {detail}")
    return "; ".join(details)


# === dcn ===


@CheckRegistry.register("dcn", "grad_offsets", gradient=True)
def check_deform_gradient(options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed + 1)
    height, width, c_in, c_out, k = 4, 4, 2, 3, 3
    x = rng.normal(size=(height, width, c_in))
    layer = ConvLayer(kernel=rng.normal(size=(k, k, c_in, c_out)), bias=np.zeros(c_out))
    upstream = rng.normal(size=(height, width, c_out))
    split = height * width * 2 * k * k
    grid = kernel_grid(k)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)

    def field(params: np.ndarray) -> DeformField:
        offsets = params[:split].reshape(height, width, 2 * k * k)
        modulation = params[split:].reshape(height, width, k * k)
        return DeformField(offsets=offsets, modulation=modulation)

    def fn(params: np.ndarray) -> float:
        return float(np.sum(upstream * deform_conv2d(x, layer, field(params), epilogue=False)))

    def analytic(params: np.ndarray) -> np.ndarray:
        d_offsets, d_modulation = deform_conv2d_offset_grad(x, layer, field(params), upstream)
        return np.concatenate([d_offsets.ravel(), d_modulation.ravel()])

    def sample(rng: np.random.Generator) -> np.ndarray:
        offsets = rng.uniform(-1.5, 1.5, size=split)
        modulation = rng.uniform(0.2, 0.9, size=height * width * k * k)
        return np.concatenate([offsets, modulation])

    def on_integer(params: np.ndarray) -> bool:
        offsets = params[:split].reshape(height, width, k * k, 2)
        xs = cols[..., None] + grid[:, 0] + offsets[..., 0]
        ys = rows[..., None] + grid[:, 1] + offsets[..., 1]
        coords = np.concatenate([xs.ravel(), ys.ravel()])
        return bool(np.any(np.abs(coords - np.round(coords)) < KINK_MARGIN))

    return sweep("deform_conv2d", fn, analytic, sample, options, nonsmooth=on_integer)


# === detector ===


def _peakiness_check(dilation: int, options: CheckOptions) -> str:
    rng = np.random.default_rng(options.seed + dilation)
    shape = (5, 5, 4)
    upstream = rng.normal(size=shape[:2])

    def fn(y: np.ndarray) -> float:
        score = combine_scores(*peakiness_scores(y.reshape(shape), dilation))
        return float(np.sum(upstream * score.plane))

    def analytic(y: np.ndarray) -> np.ndarray:
        return peakiness_score_vjp(y.reshape(shape), dilation, upstream).ravel()

    def channel_tie(y: np.ndarray) -> bool:
        alpha, beta = peakiness_scores(y.reshape(shape), dilation)
        top_two = np.sort(alpha * beta, axis=-1)[..., -2:]
        return bool(np.any(top_two[..., 1] - top_two[..., 0] < KINK_MARGIN))

    return sweep(
        f"peakiness[d={dilation}]", fn, analytic, lambda r: r.normal(size=int(np.prod(shape))), options, channel_tie
    )


@CheckRegistry.register("detector", "grad_peakiness", gradient=True)
def check_peakiness_gradient(options: CheckOptions) -> str:
    return f"d=1: {_peakiness_check(1, options)}; d=3: {_peakiness_check(3, options)}"


# === loss ===

_PAIRS, _DIM = 6, 8


def _descriptor_sampler(rng: np.random.Generator) -> np.ndarray:
    a, b = matched_descriptors(rng, _PAIRS, _DIM, noise=rng.uniform(0.05, 0.6))
    return np.concatenate([a.ravel(), b.ravel()])


def _split(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    half = _PAIRS * _DIM
    return flat[:half].reshape(_PAIRS, _DIM), flat[half:].reshape(_PAIRS, _DIM)


@CheckRegistry.register("loss", "grad_hardest_contrastive", gradient=True)
def check_hardest_gradient(options: CheckOptions) -> str:
    cells = scattered_cells(np.random.default_rng(options.seed), _PAIRS, extent=16)
    params = LossParams()

    def fn(flat: np.ndarray) -> float:
        return hardest_contrastive(*_split(flat), cells, cells, params).loss

    def analytic(flat: np.ndarray) -> np.ndarray:
        result = hardest_contrastive(*_split(flat), cells, cells, params, with_grad=True)
        return np.concatenate([result.grad_a.ravel(), result.grad_b.ravel()])

    eligible_a, eligible_b = negative_masks(_PAIRS, cells, cells, params.safe_radius)

    def kinked(flat: np.ndarray) -> bool:
        a, b = _split(flat)
        distances = cdist(a, b)
        positive = np.diag(distances)
        for i in range(_PAIRS):
            candidates = np.sort(np.concatenate([distances[i, eligible_b[i]], distances[eligible_a[i], i]]))
            near_tie = len(candidates) > 1 and candidates[1] - candidates[0] < KINK_MARGIN
            near_hinge = len(candidates) > 0 and abs(params.margin_negative - candidates[0]) < KINK_MARGIN
            if near_tie or near_hinge or abs(positive[i] - params.margin_positive) < KINK_MARGIN:
                return True
        return False

    return sweep("hardest_contrastive", fn, analytic, _descriptor_sampler, options, kinked)


@CheckRegistry.register("loss", "grad_circle", gradient=True)
def check_circle_gradient(options: CheckOptions) -> str:
    cells = scattered_cells(np.random.default_rng(options.seed), _PAIRS, extent=16)
    params = LossParams(circle_gamma=GRADIENT_CIRCLE_GAMMA)
    m = params.circle_margin

    def fn(flat: np.ndarray) -> float:
        return circle_loss(*_split(flat), cells, cells, params).loss

    def analytic(flat: np.ndarray) -> np.ndarray:
        result = circle_loss(*_split(flat), cells, cells, params, with_grad=True)
        return np.concatenate([result.grad_a.ravel(), result.grad_b.ravel()])

    def kinked(flat: np.ndarray) -> bool:
        a, b = _split(flat)
        similarity = a @ b.T
        positive = np.diag(similarity)
        negative = similarity[~np.eye(_PAIRS, dtype=bool)]
        return bool(np.any(np.abs(1.0 + m - positive) < KINK_MARGIN) or np.any(np.abs(negative + m) < KINK_MARGIN))

    return sweep("circle_loss", fn, analytic, _descriptor_sampler, options, kinked)


@CheckRegistry.register("loss", "grad_detection", gradient=True)
def check_detection_gradient(options: CheckOptions) -> str:
    count = 8

    def unpack(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return flat[:count], flat[count : 2 * count], flat[2 * count :]

    def fn(flat: np.ndarray) -> float:
        return weighted_detection_loss(*unpack(flat)).loss

    def analytic(flat: np.ndarray) -> np.ndarray:
        result = weighted_detection_loss(*unpack(flat))
        return np.concatenate([result.grad_scores_a, result.grad_scores_b, result.grad_terms])

    def sample(rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([rng.uniform(0.1, 1.0, size=2 * count), rng.uniform(0.0, 2.0, size=count)])

    return sweep("weighted_detection_loss", fn, analytic, sample, options)
