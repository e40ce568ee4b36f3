"""Exhaustive nearest-neighbour descriptor matching with ratio test and mutual check."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from deformfeat.storage.features import FeatureSet


@dataclass(frozen=True)
class Match:
    """One accepted match and the filters it went through."""

    index_a: int
    index_b: int
    distance: float
    mutual: bool
    ratio_passed: bool
    inlier: bool | None = None


@dataclass
class MatchSet:
    """Accepted matches plus counts after each filter stage."""

    matches: list[Match] = field(default_factory=list)
    candidates: int = 0
    after_ratio: int = 0
    after_mutual: int = 0

    def __len__(self) -> int:
        return len(self.matches)

    def index_pairs(self) -> np.ndarray:
        """(N, 2) array of (index_a, index_b)."""
        return np.array([(m.index_a, m.index_b) for m in self.matches], dtype=np.intp).reshape(-1, 2)

    def with_inliers(self, mask: np.ndarray) -> "MatchSet":
        """Copy with the geometric-verification flag set per match."""
        flagged = [
            Match(m.index_a, m.index_b, m.distance, m.mutual, m.ratio_passed, bool(inlier))
            for m, inlier in zip(self.matches, mask)
        ]
        return MatchSet(flagged, self.candidates, self.after_ratio, self.after_mutual)


def _descriptors(features: FeatureSet | np.ndarray) -> np.ndarray:
    if isinstance(features, FeatureSet):
        return features.descriptors.astype(np.float64)
    return np.asarray(features, dtype=np.float64)


def match_descriptors(
    a: FeatureSet | np.ndarray, b: FeatureSet | np.ndarray, ratio: float = 0.8, mutual: bool = True
) -> MatchSet:
    """Match every descriptor of a to its L2 nearest neighbour in b.

    The ratio test keeps d1 / d2 < ratio and is skipped when b has fewer than
    two descriptors. Ties resolve to the lowest index.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    desc_a, desc_b = _descriptors(a), _descriptors(b)
    if len(desc_a) == 0 or len(desc_b) == 0:
        return MatchSet()

    distances = cdist(desc_a, desc_b, metric="euclidean")
    nearest = np.argmin(distances, axis=1)
    rows = np.arange(len(desc_a))
    best = distances[rows, nearest]

    if len(desc_b) >= 2:
        second = np.partition(distances, 1, axis=1)[:, 1]
        ratio_ok = best < ratio * second
    else:
        ratio_ok = np.ones(len(desc_a), dtype=bool)

    reverse = np.argmin(distances, axis=0)
    is_mutual = reverse[nearest] == rows
    accepted = ratio_ok & is_mutual if mutual else ratio_ok

    matches = [
        Match(int(i), int(nearest[i]), float(best[i]), bool(is_mutual[i]), bool(ratio_ok[i]))
        for i in np.flatnonzero(accepted)
    ]
    return MatchSet(
        matches=matches,
        candidates=len(desc_a),
        after_ratio=int(ratio_ok.sum()),
        after_mutual=int((ratio_ok & is_mutual).sum()),
    )
