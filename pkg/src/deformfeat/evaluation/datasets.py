"""Dataset layouts: HPatches-style sequences and epipolar pair lists."""

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from deformfeat.errors import FormatError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".pgm")
HOMOGRAPHY_PATTERN = re.compile(r"^H_1_(\d+)$")
SEQUENCE_LENGTH = 6


def read_matrix(path: str | Path) -> np.ndarray:
    """Read a whitespace-separated 3x3 row-major matrix.

    Raises:
        FormatError: Not nine numbers
    """
    path = Path(path)
    try:
        values = [float(v) for v in path.read_text(encoding="utf-8").split()]
    except ValueError:
        raise FormatError(f"{path}: matrix file contains non-numeric values") from None
    if len(values) != 9:
        raise FormatError(f"{path}: expected 9 matrix entries, found {len(values)}")
    return np.array(values).reshape(3, 3)


@dataclass(frozen=True)
class HomographyPair:
    sequence: str
    image_a: Path
    image_b: Path
    homography_path: Path

    @property
    def name(self) -> str:
        return f"{self.sequence}/1-{self.image_b.stem}"


class HPatchesSequence:
    """A sequence directory with images 1..6 and homographies H_1_2 .. H_1_6."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    @property
    def name(self) -> str:
        return self.path.name

    def image_path(self, index: int) -> Path | None:
        for suffix in IMAGE_SUFFIXES:
            candidate = self.path / f"{index}{suffix}"
            if candidate.exists():
                return candidate
        return None

    def pairs(self) -> tuple[list[HomographyPair], int]:
        """Pairs (1, j) with both images and H_1_j present, and the number skipped."""
        reference = self.image_path(1)
        pairs: list[HomographyPair] = []
        skipped = 0
        for j in range(2, SEQUENCE_LENGTH + 1):
            target = self.image_path(j)
            homography = self.path / f"H_1_{j}"
            if target is None:
                continue
            if reference is None or not homography.exists():
                logger.warning(f"{self.name}: missing ground truth for pair 1-{j}, skipped")
                skipped += 1
                continue
            pairs.append(HomographyPair(self.name, reference, target, homography))
        return pairs, skipped

    @staticmethod
    def is_sequence(path: Path) -> bool:
        return any((path / f"1{suffix}").exists() for suffix in IMAGE_SUFFIXES) or any(
            HOMOGRAPHY_PATTERN.match(p.name) for p in path.iterdir() if p.is_file()
        )


def discover_sequences(root: str | Path) -> list[HPatchesSequence]:
    """The root itself when it is a sequence, otherwise its sequence subdirectories in name order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"Dataset directory not found: {root}")
    if HPatchesSequence.is_sequence(root):
        return [HPatchesSequence(root)]
    return [HPatchesSequence(p) for p in sorted(root.iterdir()) if p.is_dir() and HPatchesSequence.is_sequence(p)]


@dataclass(frozen=True)
class EpipolarPair:
    image_a: Path
    image_b: Path
    fundamental_path: Path

    @property
    def name(self) -> str:
        return f"{self.image_a.name}-{self.image_b.name}"


def read_pair_list(path: str | Path) -> list[EpipolarPair]:
    """Lines 'imgA imgB F_file'; relative paths resolve against the list's directory.

    Blank lines and lines starting with '#' are ignored.

    Raises:
        FormatError: A line without exactly three fields
    """
    path = Path(path)
    base = path.parent
    pairs = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 3:
            raise FormatError(f"{path}:{number}: expected 'imgA imgB F_file', got {len(fields)} fields")
        pairs.append(EpipolarPair(*(base / f for f in fields)))
    return pairs
