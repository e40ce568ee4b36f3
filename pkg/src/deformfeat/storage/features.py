"""Keypoint and descriptor files.

Text layout:
    ASLF1 <count> <desc_dim>
    # size <width> <height>
    x y score pyramid_scale d_1 ... d_desc_dim      (one line per keypoint)

Binary twin: magic "ASLB", u32 count, u32 desc_dim, u32 width, u32 height,
then per keypoint little-endian f32 x, y, score, pyramid_scale, descriptor.
"""

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from deformfeat.constants import DESCRIPTOR_DIM, KEYPOINTS_BINARY_MAGIC, KEYPOINTS_TEXT_MAGIC
from deformfeat.detection.base import Keypoint
from deformfeat.errors import FormatError, TruncatedDataError

FLOAT_FORMAT = "{:.9g}"
BINARY_HEADER = struct.Struct("<4sIIII")


@dataclass
class FeatureSet:
    """Keypoints with one unit-norm descriptor each and the source image size."""

    keypoints: list[Keypoint] = field(default_factory=list)
    descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, DESCRIPTOR_DIM), dtype=np.float32))
    image_size: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] != len(self.keypoints):
            raise ValueError(
                f"{len(self.keypoints)} keypoints but descriptor array of shape {self.descriptors.shape}"
            )

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def descriptor_dim(self) -> int:
        return int(self.descriptors.shape[1])

    def points(self) -> np.ndarray:
        """Keypoint coordinates as an (N, 2) array of (x, y)."""
        return np.array([[kp.x, kp.y] for kp in self.keypoints], dtype=np.float64).reshape(-1, 2)


class FeatureFile:
    """Reads and writes feature sets in the ASLF1 text or ASLB binary format."""

    HEADER_PATTERN = re.compile(rf"^{KEYPOINTS_TEXT_MAGIC} (\d+) (\d+)$")
    SIZE_PATTERN = re.compile(r"^# size (\d+) (\d+)$")

    def __init__(self, path: str | Path):
        self.path = Path(path)

    @property
    def binary(self) -> bool:
        return self.path.suffix in (".aslb", ".bin")

    def write(self, features: FeatureSet, binary: bool | None = None) -> None:
        use_binary = self.binary if binary is None else binary
        if use_binary:
            self.path.write_bytes(self._encode_binary(features))
        else:
            self.path.write_text(self._encode_text(features), encoding="utf-8")

    def read(self) -> FeatureSet:
        """Load a feature file, detecting the format from its magic.

        Raises:
            FormatError: Unknown magic or malformed header/records
            TruncatedDataError: Binary payload shorter than declared
        """
        data = self.path.read_bytes()
        if data.startswith(KEYPOINTS_BINARY_MAGIC):
            return self._decode_binary(data)
        if data.startswith(KEYPOINTS_TEXT_MAGIC.encode("ascii")):
            return self._decode_text(data.decode("utf-8"))
        raise FormatError(f"{self.path}: not a keypoint file")

    @staticmethod
    def _encode_text(features: FeatureSet) -> str:
        width, height = features.image_size
        lines = [
            f"{KEYPOINTS_TEXT_MAGIC} {len(features)} {features.descriptor_dim}\n",
            f"# size {width} {height}\n",
        ]
        for kp, descriptor in zip(features.keypoints, features.descriptors):
            values = [kp.x, kp.y, kp.score, kp.pyramid_scale, *descriptor.tolist()]
            lines.append(" ".join(FLOAT_FORMAT.format(v) for v in values) + "\n")
        return "".join(lines)

    def _decode_text(self, content: str) -> FeatureSet:
        lines = content.splitlines()
        header = self.HEADER_PATTERN.match(lines[0].strip())
        if header is None:
            raise FormatError(f"{self.path}: malformed header {lines[0]!r}")
        count, dim = int(header.group(1)), int(header.group(2))

        image_size = (0, 0)
        records = []
        for line in lines[1:]:
            stripped = line.strip()
            if not stripped:
                continue
            size = self.SIZE_PATTERN.match(stripped)
            if size is not None:
                image_size = (int(size.group(1)), int(size.group(2)))
                continue
            if stripped.startswith("#"):
                continue
            try:
                values = [float(v) for v in stripped.split()]
            except ValueError:
                raise FormatError(f"{self.path}: non-numeric keypoint record") from None
            if len(values) != 4 + dim:
                raise FormatError(f"{self.path}: record has {len(values)} values, expected {4 + dim}")
            records.append(values)
        if len(records) != count:
            raise FormatError(f"{self.path}: header declares {count} keypoints, found {len(records)}")
        return self._assemble(np.array(records, dtype=np.float64).reshape(count, 4 + dim), dim, image_size)

    @staticmethod
    def _encode_binary(features: FeatureSet) -> bytes:
        width, height = features.image_size
        header = BINARY_HEADER.pack(KEYPOINTS_BINARY_MAGIC, len(features), features.descriptor_dim, width, height)
        table = np.zeros((len(features), 4 + features.descriptor_dim), dtype="<f4")
        for i, kp in enumerate(features.keypoints):
            table[i, :4] = (kp.x, kp.y, kp.score, kp.pyramid_scale)
        table[:, 4:] = features.descriptors
        return header + table.tobytes()

    def _decode_binary(self, data: bytes) -> FeatureSet:
        if len(data) < BINARY_HEADER.size:
            raise TruncatedDataError(f"{self.path}: truncated keypoint header")
        _, count, dim, width, height = BINARY_HEADER.unpack_from(data)
        expected = count * (4 + dim) * 4
        payload = data[BINARY_HEADER.size :]
        if len(payload) < expected:
            raise TruncatedDataError(f"{self.path}: expected {expected} payload bytes, found {len(payload)}")
        if len(payload) > expected:
            raise FormatError(f"{self.path}: trailing bytes after {count} keypoints")
        table = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(count, 4 + dim)
        return self._assemble(table, dim, (width, height))

    @staticmethod
    def _assemble(table: np.ndarray, dim: int, image_size: tuple[int, int]) -> FeatureSet:
        keypoints = [
            Keypoint(
                x=float(row[0]),
                y=float(row[1]),
                score=float(row[2]),
                level_hint="file",
                pyramid_scale=float(row[3]),
            )
            for row in table
        ]
        return FeatureSet(
            keypoints=keypoints,
            descriptors=table[:, 4:].astype(np.float32).reshape(len(keypoints), dim),
            image_size=image_size,
        )


def write_features(features: FeatureSet, path: str | Path, binary: bool | None = None) -> None:
    FeatureFile(path).write(features, binary)


def read_features(path: str | Path) -> FeatureSet:
    return FeatureFile(path).read()
