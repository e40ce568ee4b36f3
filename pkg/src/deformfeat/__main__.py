"""CLI entry point."""

import argparse
import configparser
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .checks import CheckOptions
from .commands import (
    EXIT_USAGE,
    cmd_eval_epipolar,
    cmd_eval_hpatches,
    cmd_extract,
    cmd_gradcheck,
    cmd_info,
    cmd_match,
    cmd_selftest,
)
from .config import VALID_DCN, VALID_PRECISION, RunConfig
from .constants import CONFIG_PATH, LOGS_DIR
from .detection.base import VALID_FUSION, VALID_SCORING
from .errors import FormatError, NumericError
from .evaluation.epipolar import VALID_MINIMAL_SOLVERS
from .logging import get_logger, setup_logging

log = get_logger()

EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5

CONFIG_FIELDS = {f.name for f in fields(RunConfig)}


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", type=Path, default=CONFIG_PATH, help="INI file with defaults")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging (also written to a log file)")
    parser.add_argument("--threads", type=int, default=None, help="Pair-level worker threads")
    return parser


def _network_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("network")
    group.add_argument("--dcn", choices=sorted(VALID_DCN), default=None, help="Deformation variant of the last layers")
    group.add_argument("--dcn-layers", dest="dcn_layers", type=int, default=None, help="Number of deformable layers (0-3)")
    group.add_argument("--weights", default=None, help="ASLW weight file (default: seeded random weights)")
    group.add_argument("--seed", type=int, default=None, help="Seed of the random weights")
    group.add_argument("--precision", choices=sorted(VALID_PRECISION), default=None)
    return parser


def _detector_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("detector")
    group.add_argument("--scoring", choices=VALID_SCORING, default=None)
    group.add_argument("--fusion", choices=VALID_FUSION, default=None)
    group.add_argument("--top-k", dest="top_k", type=int, default=None)
    group.add_argument("--nms", type=int, default=None, help="NMS window size")
    group.add_argument("--edge-threshold", dest="edge_threshold", type=float, default=None)
    group.add_argument("--score-min", dest="score_min", type=float, default=None)
    group.add_argument("--border", type=int, default=None)
    return parser


def _matching_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("matching")
    group.add_argument("--ratio", type=float, default=None, help="Ratio-test threshold (default per scoring)")
    group.add_argument("--no-mutual", dest="mutual", action="store_const", const=False, default=None)
    return parser


def _ransac_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("ransac")
    group.add_argument("--ransac-iterations", dest="ransac_iterations", type=int, default=None)
    group.add_argument("--ransac-threshold", dest="ransac_threshold", type=float, default=None)
    group.add_argument("--ransac-seed", dest="ransac_seed", type=int, default=None)
    group.add_argument("--minimal-solver", dest="minimal_solver", choices=VALID_MINIMAL_SOLVERS, default=None)
    return parser


def _checks_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("checks")
    group.add_argument("--filter", default="", help="Run only checks whose name contains this text")
    group.add_argument("--seed", type=int, default=0)
    group.add_argument("--points", type=int, default=CheckOptions.points, help="Random points per gradient check")
    group.add_argument("--draws", type=int, default=CheckOptions.draws)
    group.add_argument("--homographies", type=int, default=CheckOptions.homographies)
    group.add_argument("--rotation-deg", dest="rotation_deg", type=float, default=CheckOptions.rotation_deg)
    group.add_argument("--translation", type=float, default=CheckOptions.translation)
    group.add_argument("--depth-min", dest="depth_min", type=float, default=CheckOptions.depth_range[0])
    group.add_argument("--depth-max", dest="depth_max", type=float, default=CheckOptions.depth_range[1])
    group.add_argument("--perturb-dlt", dest="perturb_dlt", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deformfeat",
        description="Shape-aware local features: extraction, matching and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"deformfeat v{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = _common_parser()
    network, detector = _network_parser(), _detector_parser()
    matching, ransac = _matching_parser(), _ransac_parser()

    extract = sub.add_parser("extract", parents=[common, network, detector], help="Detect and describe one image")
    extract.add_argument("--image", type=Path, required=True)
    extract.add_argument("--output", type=Path, default=None)
    extract.add_argument("--binary", action="store_const", const=True, default=None, help="Write the ASLB format")

    match = sub.add_parser("match", parents=[common, matching], help="Match two feature files")
    match.add_argument("--scoring", choices=VALID_SCORING, default=None, help="Selects the default ratio")
    match.add_argument("features_a", type=Path)
    match.add_argument("features_b", type=Path)
    match.add_argument("--output", type=Path, default=None)

    hpatches = sub.add_parser(
        "eval-hpatches", parents=[common, network, detector, matching], help="Homography benchmark"
    )
    hpatches.add_argument("root", type=Path, help="Directory of sequences")
    hpatches.add_argument("--output", type=Path, default=None)
    hpatches.add_argument("--features-suffix", dest="features_suffix", default=None)

    epipolar = sub.add_parser(
        "eval-epipolar", parents=[common, network, detector, matching, ransac], help="Fundamental-matrix benchmark"
    )
    epipolar.add_argument("pair_list", type=Path, help="File of 'image_a image_b fundamental' lines")
    epipolar.add_argument("--output", type=Path, default=None)
    epipolar.add_argument("--features-suffix", dest="features_suffix", default=None)

    sub.add_parser("gradcheck", parents=[common, _checks_parser()], help="Finite-difference gradient checks")
    sub.add_parser("selftest", parents=[common, _checks_parser()], help="Full invariant and oracle suite")
    sub.add_parser("info", parents=[common, network], help="Show the network weight table")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File defaults overridden by every flag given on the command line."""
    config = RunConfig.load(args.config)
    overrides = {k: v for k, v in vars(args).items() if k in CONFIG_FIELDS}
    return config.with_overrides(**overrides)


def check_options(args: argparse.Namespace) -> CheckOptions:
    return CheckOptions(
        seed=args.seed,
        points=args.points,
        draws=args.draws,
        homographies=args.homographies,
        rotation_deg=args.rotation_deg,
        translation=args.translation,
        depth_range=(args.depth_min, args.depth_max),
        perturb_dlt=args.perturb_dlt,
        threads=args.threads or 1,
    )


def dispatch(args: argparse.Namespace, config: RunConfig) -> int:
    if args.command == "extract":
        return cmd_extract(config, args.image, args.output)
    if args.command == "match":
        return cmd_match(config, args.features_a, args.features_b, args.output)
    if args.command == "eval-hpatches":
        return cmd_eval_hpatches(config, args.root, args.output, args.features_suffix)
    if args.command == "eval-epipolar":
        return cmd_eval_epipolar(config, args.pair_list, args.output, args.features_suffix)
    if args.command == "gradcheck":
        return cmd_gradcheck(check_options(args), args.filter)
    if args.command == "selftest":
        return cmd_selftest(check_options(args), args.filter)
    return cmd_info(config)


def main(argv: list[str] | None = None) -> int:
    """Main entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    # Setup logging - write to file in debug mode
    log_file = LOGS_DIR / "deformfeat.log" if args.debug else None
    setup_logging(debug=args.debug, log_file=log_file)
    if log_file:
        log.info(f"Debug mode enabled. Logs: {log_file}")

    try:
        config = resolve_config(args)
    except (configparser.Error, ValueError) as e:
        log.error(f"Invalid configuration file {args.config}: {e}")
        return EXIT_USAGE

    errors = config.validate()
    if errors:
        for error in errors:
            log.error(error)
        return EXIT_USAGE

    try:
        return dispatch(args, config)
    except FormatError as e:
        log.error(f"Format error: {e}")
        return EXIT_FORMAT
    except NumericError as e:
        log.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except OSError as e:
        log.error(f"I/O error: {e}")
        return EXIT_IO
    except ValueError as e:
        log.error(str(e))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
