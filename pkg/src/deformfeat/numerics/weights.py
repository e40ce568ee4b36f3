"""Weight stores: seeded initialization and the "ASLW" binary format.

File layout (little-endian):
    magic "ASLW" | u8 version
    repeated: u16 name length | UTF-8 name | u8 rank | u32 dims... | f32 values
    terminator: u16 0
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from deformfeat.constants import WEIGHTS_MAGIC, WEIGHTS_VERSION
from deformfeat.errors import FormatError, TruncatedDataError, WeightValidationError

logger = logging.getLogger(__name__)

ArchitectureTable = dict[str, tuple[int, ...]]

# Offset predictors start close to the identity deformation
OFFSET_INIT_SCALE = 0.5


@dataclass(eq=False)
class WeightStore:
    """Named float32 arrays for every layer of a network."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = WEIGHTS_VERSION

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.entries[name]
        except KeyError:
            raise WeightValidationError(name, "missing from weight store") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightStore):
            return NotImplemented
        if self.version != other.version or list(self.entries) != list(other.entries):
            return False
        return all(
            self.entries[k].shape == other.entries[k].shape
            and self.entries[k].tobytes() == other.entries[k].tobytes()
            for k in self.entries
        )

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.entries.values()))

    def validate(self, table: ArchitectureTable) -> None:
        """Check names and shapes against an architecture table.

        Raises:
            WeightValidationError: Naming the first offending layer
        """
        for name, shape in table.items():
            if name not in self.entries:
                raise WeightValidationError(name, "missing from weight store")
            if tuple(self.entries[name].shape) != tuple(shape):
                raise WeightValidationError(
                    name, f"shape {tuple(self.entries[name].shape)} does not match expected {tuple(shape)}"
                )
        for name in self.entries:
            if name not in table:
                raise WeightValidationError(name, "not part of the architecture")


def _init_values(rng: np.random.Generator, name: str, shape: tuple[int, ...]) -> np.ndarray:
    """Draw initial values for one entry, scaled by fan-in."""
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    leaf = name.rsplit("/", 1)[-1]
    if leaf == "kernel":
        values = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    elif leaf == "offset_kernel":
        values = rng.standard_normal(shape) * (OFFSET_INIT_SCALE / np.sqrt(fan_in))
    elif leaf == "variance":
        values = np.ones(shape)
    else:
        # bias, offset_bias, mean
        values = np.zeros(shape)
    return values.astype(np.float32)


def seeded_random_weights(seed: int, shapes: ArchitectureTable) -> WeightStore:
    """Deterministic weights from numpy's PCG64 generator.

    Kernels use He-normal scaling (std sqrt(2 / fan_in)); offset predictors use a
    smaller fan-in scale; biases and means are zero, variances one.
    """
    rng = np.random.default_rng(seed)
    entries = {name: _init_values(rng, name, tuple(shape)) for name, shape in shapes.items()}
    return WeightStore(entries=entries)


def write_weights(store: WeightStore, path: str | Path) -> None:
    """Serialize a weight store in the ASLW format."""
    chunks = [WEIGHTS_MAGIC, struct.pack("<B", store.version)]
    for name, values in store.entries.items():
        encoded = name.encode("utf-8")
        if not 0 < len(encoded) < 2**16:
            raise FormatError(f"Invalid layer name length for {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    chunks.append(struct.pack("<H", 0))
    Path(path).write_bytes(b"".join(chunks))
    logger.debug(f"Wrote {len(store.entries)} weight entries to {path}")


class _Reader:
    """Sequential little-endian reader over a byte buffer."""

    def __init__(self, data: bytes, path: Path):
        self._data = data
        self._pos = 0
        self._path = path

    def take(self, count: int) -> bytes:
        if self._pos + count > len(self._data):
            raise TruncatedDataError(f"{self._path}: unexpected end of weight file")
        chunk = self._data[self._pos : self._pos + count]
        self._pos += count
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_weights(path: str | Path, table: ArchitectureTable | None = None) -> WeightStore:
    """Read an ASLW file, optionally validating it against an architecture table.

    Raises:
        FormatError: Bad magic or version mismatch
        WeightValidationError: Store does not match the table
        TruncatedDataError: Truncated file
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic, not an ASLW weight file")
    (version,) = reader.unpack("<B")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weight format version {version}")

    entries: dict[str, np.ndarray] = {}
    while True:
        (name_length,) = reader.unpack("<H")
        if name_length == 0:
            break
        name = reader.take(name_length).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        if name in entries:
            raise WeightValidationError(name, "duplicated in weight file")
        entries[name] = values

    store = WeightStore(entries=entries, version=version)
    if table is not None:
        store.validate(table)
    return store
