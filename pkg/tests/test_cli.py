"""End-to-end tests of the command-line interface."""

import numpy as np
import pytest

from deformfeat.__main__ import build_parser, main
from deformfeat.errors import FormatError, NumericError, TruncatedDataError, WeightValidationError
from deformfeat.evaluation.epipolar import fundamental_from_pose
from deformfeat.losses.synthetic import random_camera_pair
from deformfeat.storage.features import FeatureSet, read_features, write_features

pytestmark = pytest.mark.integration

FAST = ["--top-k", "60", "--score-min", "0"]


def write_matrix(path, matrix) -> None:
    path.write_text("\n".join(" ".join(f"{v:.12g}" for v in row) for row in matrix) + "\n")


@pytest.fixture
def run(isolated_config_path):
    """Call main() with an isolated config file."""

    def _run(*argv: str) -> int:
        command, *rest = argv
        return main([command, "--config", str(isolated_config_path), *rest])

    return _run


@pytest.fixture
def sequence(tmp_path, make_image):
    """Sequence with an identical pair (1-2) and a pair without ground truth (1-3)."""
    root = tmp_path / "hpatches" / "v_synthetic"
    root.mkdir(parents=True)
    first = make_image("seq1.pgm", seed=5)
    for name in ("1.pgm", "2.pgm", "3.pgm"):
        (root / name).write_bytes(first.read_bytes())
    write_matrix(root / "H_1_2", np.eye(3))
    return root


class TestParser:
    """Tests for argument parsing."""

    def test_subcommands(self):
        """Test every subcommand parses."""
        parser = build_parser()
        assert parser.parse_args(["extract", "--image", "a.pgm"]).command == "extract"
        assert parser.parse_args(["match", "a.aslf", "b.aslf"]).features_b.name == "b.aslf"
        assert parser.parse_args(["eval-epipolar", "pairs.txt", "--minimal-solver", "seven"]).minimal_solver == "seven"
        assert parser.parse_args(["selftest", "--filter", "dcn"]).filter == "dcn"
        assert parser.parse_args(["info", "--dcn", "affine"]).dcn == "affine"

    def test_unset_flags_are_none(self):
        """Test flags left out do not override the config file."""
        args = build_parser().parse_args(["extract", "--image", "a.pgm"])
        assert args.top_k is None
        assert args.dcn is None
        assert args.binary is None

    def test_unknown_command(self):
        """Test an unknown subcommand is a usage error."""
        assert main(["train"]) == 2


class TestExtract:
    """Tests for the extract command."""

    def test_writes_text_next_to_image(self, run, textured_image):
        """Test the default output is <image>.aslf."""
        assert run("extract", "--image", str(textured_image), *FAST) == 0
        features = read_features(textured_image.with_suffix(".aslf"))
        assert 0 < len(features) <= 60
        assert features.image_size == (96, 80)

    def test_binary_output(self, run, textured_image, tmp_path):
        """Test --binary writes the ASLB format."""
        out = tmp_path / "out.feat"
        assert run("extract", "--image", str(textured_image), "--output", str(out), "--binary", *FAST) == 0
        assert out.read_bytes()[:4] == b"ASLB"

    def test_deterministic(self, run, textured_image, tmp_path):
        """Test two runs write identical files."""
        first, second = tmp_path / "1.aslf", tmp_path / "2.aslf"
        run("extract", "--image", str(textured_image), "--output", str(first), *FAST)
        run("extract", "--image", str(textured_image), "--output", str(second), *FAST)
        assert first.read_bytes() == second.read_bytes()

    def test_config_file_defaults(self, run, isolated_config_path, textured_image):
        """Test values from the config file apply when no flag is given."""
        isolated_config_path.write_text("[detector]\ntop_k = 7\nscore_min = 0\n")
        assert run("extract", "--image", str(textured_image)) == 0
        assert len(read_features(textured_image.with_suffix(".aslf"))) == 7

    def test_missing_image(self, run, tmp_path):
        """Test a missing image exits with the I/O code."""
        assert run("extract", "--image", str(tmp_path / "none.pgm")) == 3

    def test_bad_image_format(self, run, tmp_path):
        """Test an unreadable image header exits with the format code."""
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
        assert run("extract", "--image", str(path)) == 4

    def test_truncated_image(self, run, tmp_path):
        """Test a short pixel payload exits with the I/O code."""
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n16 16\n255\n" + bytes(10))
        assert run("extract", "--image", str(path)) == 3

    def test_invalid_option(self, run, textured_image):
        """Test an out-of-range option is a usage error."""
        assert run("extract", "--image", str(textured_image), "--top-k", "0") == 2

    def test_malformed_config(self, run, isolated_config_path, textured_image):
        """Test a config file without sections is a usage error."""
        isolated_config_path.write_text("top_k = 3\n")
        assert run("extract", "--image", str(textured_image)) == 2


class TestMatch:
    """Tests for the match command."""

    def test_self_match(self, run, textured_image, tmp_path, capsys):
        """Test matching a feature file with itself accepts every keypoint with ratio 1."""
        features = tmp_path / "a.aslf"
        run("extract", "--image", str(textured_image), "--output", str(features), *FAST)
        capsys.readouterr()

        assert run("match", str(features), str(features), "--ratio", "1.0") == 0

        lines = capsys.readouterr().out.splitlines()
        count = len(read_features(features))
        assert lines[0] == f"# candidates\t{count}"
        assert lines[4].split("\t") == ["index_a", "index_b", "x_a", "y_a", "x_b", "y_b", "distance"]
        rows = [line.split("\t") for line in lines[5:]]
        assert len(rows) == count
        assert all(row[0] == row[1] for row in rows)

    def test_empty_second_file(self, run, textured_image, tmp_path, capsys):
        """Test matching against a file without keypoints gives zero matches and exit 0."""
        features = tmp_path / "a.aslf"
        empty = tmp_path / "empty.aslf"
        run("extract", "--image", str(textured_image), "--output", str(features), *FAST)
        write_features(FeatureSet(image_size=(96, 80)), empty)
        capsys.readouterr()

        assert run("match", str(features), str(empty)) == 0
        assert "# accepted\t0" in capsys.readouterr().out.splitlines()

    def test_bad_feature_file(self, run, tmp_path):
        """Test a file with an unknown magic exits with the format code."""
        path = tmp_path / "x.aslf"
        path.write_text("NOPE\n")
        assert run("match", str(path), str(path)) == 4


class TestEvalHPatches:
    """Tests for the homography benchmark."""

    def test_identical_pair(self, run, sequence, tmp_path, capsys):
        """Test an identical pair is fully repeatable and the missing H counts as skipped."""
        report = tmp_path / "report.tsv"
        assert run("eval-hpatches", str(sequence.parent), "--output", str(report), *FAST) == 0

        header, *rows = [line.split("\t") for line in report.read_text().splitlines()]
        assert len(rows) == 1
        row = dict(zip(header, rows[0]))
        assert row["pair"] == "v_synthetic/1-2"
        assert float(row["rep"]) == pytest.approx(100.0)
        assert float(row["mma@1"]) == pytest.approx(100.0)
        assert "skipped" in capsys.readouterr().err

    def test_precomputed_features(self, run, sequence, tmp_path):
        """Test --features-suffix reads feature files next to the images."""
        for name in ("1", "2"):
            run("extract", "--image", str(sequence / f"{name}.pgm"), *FAST)
        report = tmp_path / "report.tsv"
        assert run("eval-hpatches", str(sequence), "--output", str(report), "--features-suffix", ".aslf") == 0
        assert len(report.read_text().splitlines()) == 2

    def test_empty_dataset(self, run, tmp_path, capsys):
        """Test a directory without sequences gives an empty report and exit 0."""
        empty = tmp_path / "empty"
        empty.mkdir()
        assert run("eval-hpatches", str(empty)) == 0
        assert capsys.readouterr().out.startswith("pair\tkp_a")

    def test_missing_root(self, run, tmp_path):
        """Test a missing dataset root exits with the I/O code."""
        assert run("eval-hpatches", str(tmp_path / "none")) == 3


class TestEvalEpipolar:
    """Tests for the fundamental-matrix benchmark."""

    def test_pair_list(self, run, make_image, tmp_path, capsys):
        """Test listed pairs are evaluated and broken ground truth is skipped."""
        make_image("a.pgm", seed=1)
        make_image("b.pgm", seed=2)
        cam = random_camera_pair(np.random.default_rng(0), size=(96, 80))
        write_matrix(tmp_path / "F_ab", fundamental_from_pose(cam))
        write_matrix(tmp_path / "F_full", np.eye(3))
        (tmp_path / "pairs.txt").write_text("a.pgm b.pgm F_ab\na.pgm b.pgm F_full\na.pgm b.pgm F_missing\n")

        assert run("eval-epipolar", str(tmp_path / "pairs.txt"), "--ransac-iterations", "200", *FAST) == 0

        captured = capsys.readouterr()
        header, *rows = [line.split("\t") for line in captured.out.splitlines()]
        assert header == ["pair", "recalled", "sed", "inlier", "inlier_m", "corrs", "corrs_m", "failed"]
        assert len(rows) == 1
        assert "skipped" in captured.err

    def test_malformed_pair_list(self, run, tmp_path):
        """Test a pair list line with two fields exits with the format code."""
        (tmp_path / "pairs.txt").write_text("a.pgm b.pgm\n")
        assert run("eval-epipolar", str(tmp_path / "pairs.txt")) == 4


class TestChecks:
    """Tests for selftest, gradcheck and info."""

    def test_selftest_filter(self, run, capsys):
        """Test a filtered self-test passes and lists its checks."""
        assert run("selftest", "--filter", "numerics") == 0
        assert "numerics.bilinear" in capsys.readouterr().out

    def test_no_matching_checks(self, run):
        """Test a filter matching nothing is a usage error."""
        assert run("selftest", "--filter", "no-such-check") == 2

    def test_gradcheck_detects_perturbation(self, run):
        """Test a perturbed DLT Jacobian fails the gradient check."""
        assert run("gradcheck", "--filter", "geometry.grad_dlt", "--points", "3", "--perturb-dlt", "0.01") == 1

    def test_gradcheck_passes(self, run):
        """Test the unperturbed DLT Jacobian passes."""
        assert run("gradcheck", "--filter", "geometry.grad_dlt", "--points", "5") == 0

    def test_info(self, run, capsys):
        """Test info prints the weight table and total."""
        assert run("info", "--dcn", "similarity") == 0
        out = capsys.readouterr().out
        assert "conv8" in out
        assert "total" in out


class TestExitCodes:
    """Tests for the exception to exit-code mapping in main()."""

    @pytest.mark.parametrize(
        "error, code",
        [
            (NumericError("singular"), 5),
            (FormatError("bad magic"), 4),
            (WeightValidationError("conv8/kernel", "shape mismatch"), 4),
            (TruncatedDataError("short read"), 3),
            (FileNotFoundError("gone"), 3),
            (ValueError("bad value"), 2),
        ],
    )
    def test_mapping(self, run, mocker, error, code):
        """Test each error family leaves main() with its exit code."""
        mocker.patch("deformfeat.__main__.dispatch", side_effect=error)
        assert run("info") == code
