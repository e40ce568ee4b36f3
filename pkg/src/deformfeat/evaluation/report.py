"""Evaluation reports: per-pair rows, dataset means, TSV and terminal tables."""

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

from rich.console import Console
from rich.table import Table

from deformfeat.constants import MMA_THRESHOLDS

Row = dict[str, float | int | str | None]


def _format(value: float | int | str | None) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.4f}"
    return str(value)


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None and not math.isinf(v)]
    return sum(present) / len(present) if present else None


@dataclass
class HomographyPairResult:
    name: str
    keypoints_a: int
    keypoints_b: int
    matches: int
    repeatability: float | None
    matching_score: float | None
    mma: dict[float, float | None] = field(default_factory=dict)

    def row(self) -> Row:
        row: Row = {
            "pair": self.name,
            "kp_a": self.keypoints_a,
            "kp_b": self.keypoints_b,
            "matches": self.matches,
            "rep": self.repeatability,
            "ms": self.matching_score,
        }
        for t in MMA_THRESHOLDS:
            row[f"mma@{t}"] = self.mma.get(t)
        return row


@dataclass
class EpipolarPairResult:
    name: str
    recalled: bool
    error: float
    inlier_ratio: float | None
    inlier_ratio_m: float | None
    corrs: int
    corrs_m: int
    failed: bool = False

    def row(self) -> Row:
        return {
            "pair": self.name,
            "recalled": int(self.recalled),
            "sed": self.error,
            "inlier": self.inlier_ratio,
            "inlier_m": self.inlier_ratio_m,
            "corrs": self.corrs,
            "corrs_m": self.corrs_m,
            "failed": int(self.failed),
        }


@dataclass
class EvalReport:
    """Per-pair results of one protocol plus the number of skipped pairs."""

    mode: str
    pairs: list[HomographyPairResult | EpipolarPairResult] = field(default_factory=list)
    skipped: int = 0

    def columns(self) -> list[str]:
        if self.pairs:
            return list(self.pairs[0].row())
        if self.mode == "hpatches":
            return ["pair", "kp_a", "kp_b", "matches", "rep", "ms"] + [f"mma@{t}" for t in MMA_THRESHOLDS]
        return ["pair", "recalled", "sed", "inlier", "inlier_m", "corrs", "corrs_m", "failed"]

    def summary(self) -> Row:
        """Dataset means; absent metrics are excluded, recall is a percentage."""
        rows = [p.row() for p in self.pairs]
        summary: Row = {"pairs": len(rows), "skipped": self.skipped}
        if self.mode == "hpatches":
            for key in ["rep", "ms"] + [f"mma@{t}" for t in MMA_THRESHOLDS]:
                summary[key] = _mean([r[key] for r in rows])
        else:
            summary["recall"] = 100.0 * sum(r["recalled"] for r in rows) / len(rows) if rows else None
            for key in ("inlier", "inlier_m", "corrs", "corrs_m"):
                summary[key] = _mean([r[key] for r in rows])
        return summary

    def to_tsv(self) -> str:
        columns = self.columns()
        lines = ["\t".join(columns)]
        for pair in self.pairs:
            row = pair.row()
            lines.append("\t".join(_format(row[c]) for c in columns))
        return "\n".join(lines) + "\n"

    def write_tsv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    def render_table(self) -> str:
        """Aggregate table as plain terminal text."""
        title = "HPatches (homography)" if self.mode == "hpatches" else "Epipolar (fundamental matrix)"
        table = Table(title=title)
        summary = self.summary()
        for key in summary:
            table.add_column(key, justify="right")
        table.add_row(*(_format(v) for v in summary.values()))
        buffer = io.StringIO()
        Console(file=buffer, width=160, color_system=None, force_terminal=False).print(table)
        return buffer.getvalue()
