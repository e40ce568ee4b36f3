"""Command implementations behind the CLI; each returns a process exit code."""

import io
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

import numpy as np
from rich.console import Console
from rich.table import Table

from .checks import CheckOptions, CheckRegistry, CheckResult
from .config import RunConfig
from .constants import RECALL_THRESHOLD
from .errors import FormatError
from .evaluation.datasets import EpipolarPair, HomographyPair, discover_sequences, read_matrix, read_pair_list
from .evaluation.epipolar import (
    FundamentalGT,
    estimate_fundamental_ransac,
    mean_virtual_error,
    symmetric_epipolar_distance,
    virtual_correspondences,
)
from .evaluation.homography import HomographyGT, matching_score, mma_curve, repeatability
from .evaluation.matching import MatchSet, match_descriptors
from .evaluation.report import EpipolarPairResult, EvalReport, HomographyPairResult
from .evaluation.runner import PairRunner
from .logging import get_logger
from .network.backbone import architecture_table, parameter_count
from .pipeline import FeatureExtractor
from .storage.features import FeatureSet, read_features, write_features

log = get_logger()

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def default_feature_path(image: Path, binary: bool) -> Path:
    return image.with_suffix(".aslb" if binary else ".aslf")


def cmd_extract(config: RunConfig, image: Path, output: Path | None = None) -> int:
    """Detect and describe one image and write its feature file."""
    output = output or default_feature_path(image, config.binary)
    features = FeatureExtractor.from_config(config).extract_path(image)
    write_features(features, output, binary=True if config.binary else None)
    log.info(f"Wrote {len(features)} keypoints to {output}")
    return EXIT_OK


def write_matches(matches: MatchSet, a: FeatureSet, b: FeatureSet, out: TextIO) -> None:
    """Filter counts as '#' comment lines, then one TSV row per match."""
    out.write(f"# candidates\t{matches.candidates}\n")
    out.write(f"# after_ratio\t{matches.after_ratio}\n")
    out.write(f"# after_mutual\t{matches.after_mutual}\n")
    out.write(f"# accepted\t{len(matches)}\n")
    out.write("index_a\tindex_b\tx_a\ty_a\tx_b\ty_b\tdistance\n")
    for m in matches.matches:
        ka, kb = a.keypoints[m.index_a], b.keypoints[m.index_b]
        out.write(f"{m.index_a}\t{m.index_b}\t{ka.x:.4f}\t{ka.y:.4f}\t{kb.x:.4f}\t{kb.y:.4f}\t{m.distance:.6f}\n")


def cmd_match(config: RunConfig, features_a: Path, features_b: Path, output: Path | None = None) -> int:
    """Match two feature files; TSV to output or stdout."""
    a, b = read_features(features_a), read_features(features_b)
    matches = match_descriptors(a, b, ratio=config.effective_ratio, mutual=config.mutual)
    log.info(
        f"{matches.candidates} candidates, {matches.after_ratio} after ratio {config.effective_ratio}, "
        f"{matches.after_mutual} after mutual check, {len(matches)} accepted"
    )
    if output is None:
        write_matches(matches, a, b, sys.stdout)
    else:
        with open(output, "w", encoding="utf-8") as fh:
            write_matches(matches, a, b, fh)
    return EXIT_OK


class FeatureSource:
    """Feature sets per image: a precomputed file next to the image or a fresh extraction.

    Results are cached so images shared by several pairs are processed once.
    """

    def __init__(self, config: RunConfig, suffix: str | None = None):
        self.config = config
        self.suffix = suffix
        self._extractor: FeatureExtractor | None = None
        self._cache: dict[Path, FeatureSet] = {}
        self._lock = threading.Lock()

    def _get_extractor(self) -> FeatureExtractor:
        with self._lock:
            if self._extractor is None:
                self._extractor = FeatureExtractor.from_config(self.config)
            return self._extractor

    def load(self, image: Path) -> FeatureSet:
        if self.suffix:
            precomputed = image.with_suffix(self.suffix)
            if precomputed.exists():
                return read_features(precomputed)
        return self._get_extractor().extract_path(image)

    def prefetch(self, images: list[Path]) -> None:
        unique = [p for p in dict.fromkeys(images) if p not in self._cache]
        runner = PairRunner(lambda _, path: self.load(path), threads=self.config.threads)
        for path, outcome in zip(unique, runner.run(unique)):
            if outcome.error is not None:
                raise outcome.error
            self._cache[path] = outcome.result

    def __getitem__(self, image: Path) -> FeatureSet:
        return self._cache[image]


def _emit_report(report: EvalReport, output: Path | None) -> None:
    if output is None:
        sys.stdout.write(report.to_tsv())
    else:
        report.write_tsv(output)
        log.info(f"Per-pair report written to {output}")
    sys.stderr.write(report.render_table())


def evaluate_homography_pair(pair: HomographyPair, features: FeatureSource, config: RunConfig) -> HomographyPairResult:
    a, b = features[pair.image_a], features[pair.image_b]
    gt = HomographyGT(read_matrix(pair.homography_path), a.image_size, b.image_size)
    points_a, points_b = a.points(), b.points()
    matches = match_descriptors(a, b, ratio=config.effective_ratio, mutual=config.mutual)
    return HomographyPairResult(
        name=pair.name,
        keypoints_a=len(a),
        keypoints_b=len(b),
        matches=len(matches),
        repeatability=repeatability(points_a, points_b, gt),
        matching_score=matching_score(matches, points_a, points_b, gt),
        mma=mma_curve(matches, points_a, points_b, gt),
    )


def cmd_eval_hpatches(
    config: RunConfig, root: Path, output: Path | None = None, features_suffix: str | None = None
) -> int:
    """Rep., M.S. and MMA@1..10 over HPatches-style sequences."""
    start = time.perf_counter()
    pairs: list[HomographyPair] = []
    skipped = 0
    for sequence in discover_sequences(root):
        found, missing = sequence.pairs()
        pairs.extend(found)
        skipped += missing

    report = EvalReport(mode="hpatches", skipped=skipped)
    if not pairs:
        log.warning(f"No evaluable pairs under {root}")
        _emit_report(report, output)
        return EXIT_OK

    features = FeatureSource(config, features_suffix)
    features.prefetch([p for pair in pairs for p in (pair.image_a, pair.image_b)])
    runner = PairRunner(lambda _, pair: evaluate_homography_pair(pair, features, config), threads=config.threads)
    for pair, outcome in zip(pairs, runner.run(pairs)):
        if outcome.error is not None:
            log.warning(f"{pair.name}: {outcome.error}, skipped")
            report.skipped += 1
        else:
            report.pairs.append(outcome.result)

    log.info(f"Evaluated {len(report.pairs)} pairs ({report.skipped} skipped) in {time.perf_counter() - start:.1f}s")
    _emit_report(report, output)
    return EXIT_OK


def _percent(mask: np.ndarray) -> float | None:
    return 100.0 * float(mask.mean()) if mask.size else None


def evaluate_epipolar_pair(
    index: int, pair: EpipolarPair, features: FeatureSource, config: RunConfig
) -> EpipolarPairResult:
    a, b = features[pair.image_a], features[pair.image_b]
    try:
        gt = FundamentalGT(read_matrix(pair.fundamental_path), a.image_size, b.image_size)
    except ValueError as e:
        raise FormatError(f"{pair.fundamental_path}: {e}") from None
    matches = match_descriptors(a, b, ratio=config.effective_ratio, mutual=config.mutual)
    pairs = matches.index_pairs()
    xa, xb = a.points()[pairs[:, 0]], b.points()[pairs[:, 1]]

    estimate = estimate_fundamental_ransac(xa, xb, a.image_size, b.image_size, config.ransac_config())
    # virtual correspondences are seeded per pair so thread count never changes them
    virtual = virtual_correspondences(gt, rng=np.random.default_rng([config.ransac_seed, index]))
    error = mean_virtual_error(estimate.F, virtual) if estimate.success else float("inf")
    distances, _ = symmetric_epipolar_distance(xa, xb, gt.matrix, a.image_size, b.image_size)
    true_inliers = distances < config.ransac_threshold
    return EpipolarPairResult(
        name=pair.name,
        recalled=error < RECALL_THRESHOLD,
        error=error,
        inlier_ratio=_percent(true_inliers),
        inlier_ratio_m=_percent(true_inliers[estimate.inliers]),
        corrs=len(matches),
        corrs_m=estimate.inlier_count,
        failed=not estimate.success,
    )


def cmd_eval_epipolar(
    config: RunConfig, pair_list: Path, output: Path | None = None, features_suffix: str | None = None
) -> int:
    """Recall, %Inlier(-m) and #Corrs(-m) over a list of image pairs with ground-truth F."""
    start = time.perf_counter()
    pairs = read_pair_list(pair_list)
    report = EvalReport(mode="epipolar")
    if not pairs:
        log.warning(f"No pairs listed in {pair_list}")
        _emit_report(report, output)
        return EXIT_OK

    missing = [p for p in pairs if not p.fundamental_path.exists()]
    for pair in missing:
        log.warning(f"{pair.name}: missing ground truth {pair.fundamental_path}, skipped")
    report.skipped = len(missing)
    pairs = [p for p in pairs if p.fundamental_path.exists()]

    features = FeatureSource(config, features_suffix)
    features.prefetch([p for pair in pairs for p in (pair.image_a, pair.image_b)])
    runner = PairRunner(
        lambda index, pair: evaluate_epipolar_pair(index, pair, features, config), threads=config.threads
    )
    for pair, outcome in zip(pairs, runner.run(pairs)):
        if outcome.error is not None:
            log.warning(f"{pair.name}: {outcome.error}, skipped")
            report.skipped += 1
        else:
            report.pairs.append(outcome.result)

    log.info(f"Evaluated {len(report.pairs)} pairs ({report.skipped} skipped) in {time.perf_counter() - start:.1f}s")
    _emit_report(report, output)
    return EXIT_OK


def render_checks(results: list[CheckResult], title: str) -> str:
    table = Table(title=title)
    table.add_column("check")
    table.add_column("status")
    table.add_column("time", justify="right")
    table.add_column("detail")
    for result in results:
        table.add_row(result.name, result.status, f"{result.elapsed:.2f}s", result.detail)
    buffer = io.StringIO()
    Console(file=buffer, width=160, color_system=None, force_terminal=False).print(table)
    return buffer.getvalue()


def _run_checks(options: CheckOptions, pattern: str, gradient_only: bool, title: str) -> int:
    if not CheckRegistry.list_checks(pattern, gradient_only):
        log.error(f"No checks match '{pattern}'")
        return EXIT_USAGE
    start = time.perf_counter()
    results = CheckRegistry.run(options, pattern, gradient_only)
    sys.stdout.write(render_checks(results, title))
    failed = [r.name for r in results if not r.passed]
    elapsed = time.perf_counter() - start
    if failed:
        log.error(f"{len(failed)}/{len(results)} checks failed in {elapsed:.1f}s: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    log.info(f"All {len(results)} checks passed in {elapsed:.1f}s")
    return EXIT_OK


def cmd_gradcheck(options: CheckOptions, pattern: str = "") -> int:
    """Finite-difference checks of every analytic derivative."""
    return _run_checks(options, pattern, gradient_only=True, title="Gradient checks")


def cmd_selftest(options: CheckOptions, pattern: str = "") -> int:
    """All invariant, oracle and gradient checks."""
    return _run_checks(options, pattern, gradient_only=False, title="Self-test")


@dataclass
class LayerRow:
    name: str
    shape: tuple[int, ...]

    @property
    def count(self) -> int:
        return int(np.prod(self.shape))


def cmd_info(config: RunConfig) -> int:
    """Print the weight table of the configured network."""
    cfg = config.backbone_config()
    rows = [LayerRow(name, tuple(shape)) for name, shape in architecture_table(cfg).items()]
    table = Table(title=f"Network (dcn={cfg.dcn}, deformable: {', '.join(cfg.deformable_layers()) or 'none'})")
    table.add_column("entry")
    table.add_column("shape")
    table.add_column("parameters", justify="right")
    for row in rows:
        table.add_row(row.name, "x".join(str(d) for d in row.shape), str(row.count))
    table.add_row("total", "", str(parameter_count(cfg)))
    Console(width=120, color_system=None, force_terminal=False, file=sys.stdout).print(table)
    return EXIT_OK
