"""Run configuration: INI file defaults overridden by command-line flags."""

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .constants import (
    BORDER_MARGIN,
    CONFIG_PATH,
    DEFAULT_TOP_K,
    EDGE_THRESHOLD,
    NMS_SIZE,
    RANSAC_ITERATIONS,
    RANSAC_SED_THRESHOLD,
    RATIO_D2NET,
    RATIO_DEFAULT,
    SCORE_MIN,
    ensure_dir,
)
from .detection.base import VALID_FUSION, VALID_SCORING, DetectorConfig
from .evaluation.epipolar import VALID_MINIMAL_SOLVERS, RansacConfig
from .network.backbone import NO_DEFORMATION, BackboneConfig
from .network.variants import DeformVariantRegistry

# Valid option values
VALID_DCN = {NO_DEFORMATION, *DeformVariantRegistry.list_types()}
VALID_PRECISION = {"float32", "float64"}

# INI section of every field
SECTIONS = {
    "scoring": "detector",
    "fusion": "detector",
    "top_k": "detector",
    "nms": "detector",
    "edge_threshold": "detector",
    "score_min": "detector",
    "border": "detector",
    "dcn": "network",
    "dcn_layers": "network",
    "weights": "network",
    "seed": "network",
    "precision": "network",
    "ratio": "matching",
    "mutual": "matching",
    "ransac_iterations": "ransac",
    "ransac_threshold": "ransac",
    "ransac_seed": "ransac",
    "minimal_solver": "ransac",
    "threads": "run",
    "binary": "run",
}


@dataclass
class RunConfig:
    """Settings shared by every command."""

    scoring: str = "peakiness"
    fusion: str = "multilevel"
    top_k: int = DEFAULT_TOP_K
    nms: int = NMS_SIZE
    edge_threshold: float = EDGE_THRESHOLD
    score_min: float = SCORE_MIN
    border: int = BORDER_MARGIN
    dcn: str = "free"
    dcn_layers: int = 3
    weights: str = ""  # empty: seeded random weights
    seed: int = 0
    precision: str = "float32"
    ratio: float | None = None  # None: preset for the scoring
    mutual: bool = True
    ransac_iterations: int = RANSAC_ITERATIONS
    ransac_threshold: float = RANSAC_SED_THRESHOLD
    ransac_seed: int = 0
    minimal_solver: str = "eight"
    threads: int = 1
    binary: bool = False

    @classmethod
    def load(cls, path: Path = CONFIG_PATH) -> "RunConfig":
        """Load configuration from file; missing keys keep their defaults."""
        parser = configparser.ConfigParser()
        if path.exists():
            parser.read(path)

        defaults = cls()
        values = {}
        for f in fields(cls):
            section = SECTIONS[f.name]
            if not parser.has_option(section, f.name):
                continue
            default = getattr(defaults, f.name)
            if isinstance(default, bool):
                values[f.name] = parser.getboolean(section, f.name)
            elif isinstance(default, int):
                values[f.name] = parser.getint(section, f.name)
            elif isinstance(default, float) or f.name == "ratio":
                raw = parser.get(section, f.name).strip()
                values[f.name] = float(raw) if raw else None
            else:
                values[f.name] = parser.get(section, f.name)
        return cls(**values)

    def save(self, path: Path = CONFIG_PATH) -> None:
        """Save configuration to file."""
        ensure_dir(path.parent)

        parser = configparser.ConfigParser()
        for f in fields(self):
            section = SECTIONS[f.name]
            if not parser.has_section(section):
                parser.add_section(section)
            value = getattr(self, f.name)
            if value is None:
                text = ""
            elif isinstance(value, bool):
                text = str(value).lower()
            else:
                text = str(value)
            parser.set(section, f.name, text)

        with open(path, "w") as fh:
            parser.write(fh)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with every non-None override applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @property
    def effective_ratio(self) -> float:
        """Ratio-test threshold, defaulting per scoring when unset."""
        if self.ratio is not None:
            return self.ratio
        return RATIO_D2NET if self.scoring == "d2net-ratio" else RATIO_DEFAULT

    def validate(self) -> list[str]:
        """Validate configuration values.

        Returns:
            List of validation error messages (empty if valid)
        """
        errors = []

        if self.scoring not in VALID_SCORING:
            errors.append(f"Invalid scoring '{self.scoring}'. Valid: {', '.join(VALID_SCORING)}")
        if self.fusion not in VALID_FUSION:
            errors.append(f"Invalid fusion '{self.fusion}'. Valid: {', '.join(VALID_FUSION)}")
        if self.dcn not in VALID_DCN:
            errors.append(f"Invalid dcn '{self.dcn}'. Valid: {', '.join(sorted(VALID_DCN))}")
        if self.precision not in VALID_PRECISION:
            errors.append(f"Invalid precision '{self.precision}'. Valid: {', '.join(sorted(VALID_PRECISION))}")
        if self.minimal_solver not in VALID_MINIMAL_SOLVERS:
            errors.append(f"Invalid minimal_solver '{self.minimal_solver}'. Valid: {', '.join(VALID_MINIMAL_SOLVERS)}")

        if self.top_k < 1:
            errors.append(f"top_k must be >= 1, got {self.top_k}")
        if self.nms < 3 or self.nms % 2 == 0:
            errors.append(f"nms must be an odd size >= 3, got {self.nms}")
        if self.edge_threshold <= 0:
            errors.append(f"edge_threshold must be positive, got {self.edge_threshold}")
        if self.border < 1:
            errors.append(f"border must be >= 1, got {self.border}")
        if not 0 <= self.dcn_layers <= 3:
            errors.append(f"dcn_layers must be 0-3, got {self.dcn_layers}")
        if self.ratio is not None and not 0 < self.ratio <= 1:
            errors.append(f"ratio must be in (0, 1], got {self.ratio}")
        if self.ransac_iterations < 1:
            errors.append(f"ransac_iterations must be >= 1, got {self.ransac_iterations}")
        if self.ransac_threshold <= 0:
            errors.append(f"ransac_threshold must be positive, got {self.ransac_threshold}")
        if self.threads < 1 or self.threads > 256:
            errors.append(f"threads must be 1-256, got {self.threads}")

        return errors

    def is_valid(self) -> bool:
        """Check if configuration is valid."""
        return len(self.validate()) == 0

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            scoring=self.scoring,
            fusion=self.fusion,
            nms_size=self.nms,
            edge_threshold=self.edge_threshold,
            score_min=self.score_min,
            top_k=self.top_k,
            border=self.border,
        )

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(dcn=self.dcn, dcn_layers=self.dcn_layers)

    def ransac_config(self) -> RansacConfig:
        return RansacConfig(
            iterations=self.ransac_iterations,
            threshold=self.ransac_threshold,
            seed=self.ransac_seed,
            minimal_solver=self.minimal_solver,
        )
