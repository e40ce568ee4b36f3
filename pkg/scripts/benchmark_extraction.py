#!/usr/bin/env python3
"""Benchmark feature extraction.

Times extraction for every fusion mode and deformation variant on a seeded
synthetic image. Runs offline; weights are seeded random weights.

Usage:
    uv run python scripts/benchmark_extraction.py [SIZE]
"""

import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from deformfeat.config import VALID_DCN, RunConfig
from deformfeat.detection.base import VALID_FUSION
from deformfeat.losses.synthetic import smooth_image
from deformfeat.numerics.tensor import Image, as_tensor
from deformfeat.pipeline import FeatureExtractor


@dataclass
class BenchmarkResult:
    """Result of a single extraction benchmark."""

    fusion: str
    dcn: str
    extraction_time_ms: float
    keypoints: int
    megapixels: float

    @property
    def ms_per_megapixel(self) -> float:
        return self.extraction_time_ms / self.megapixels if self.megapixels > 0 else 0.0


def benchmark_extraction(image: Image, fusion: str, dcn: str, top_k: int = 2000) -> BenchmarkResult:
    """Benchmark one fusion / variant combination."""
    config = RunConfig(fusion=fusion, dcn=dcn, top_k=top_k, threads=1)
    extractor = FeatureExtractor.from_config(config)

    start = time.perf_counter()
    features = extractor.extract(image)
    elapsed_ms = (time.perf_counter() - start) * 1000

    height, width = image.pixels.shape[:2]
    return BenchmarkResult(
        fusion=fusion,
        dcn=dcn,
        extraction_time_ms=elapsed_ms,
        keypoints=len(features),
        megapixels=height * width / 1e6,
    )


def print_results(results: list[BenchmarkResult]) -> None:
    """Print benchmark results as a table."""
    print()
    print("=" * 72)
    print("EXTRACTION BENCHMARK RESULTS")
    print("=" * 72)
    print()
    print(f"{'Fusion':<12} | {'DCN':<11} | {'Time':>10} | {'ms/MP':>9} | {'Keypoints':>9}")
    print("-" * 72)

    for r in results:
        print(
            f"{r.fusion:<12} | {r.dcn:<11} | {r.extraction_time_ms:>7.0f} ms | "
            f"{r.ms_per_megapixel:>9.0f} | {r.keypoints:>9}"
        )

    print("-" * 72)

    if results:
        fastest = min(results, key=lambda r: r.extraction_time_ms)
        print(f"\nFastest: {fastest.fusion}/{fastest.dcn} ({fastest.extraction_time_ms:.0f} ms)")


def main():
    """Run the benchmark grid."""
    size = int(sys.argv[1]) if len(sys.argv) > 1 else 480
    pixels = smooth_image(np.random.default_rng(0), (size, size), blobs=size * size // 150)
    image = Image(as_tensor(pixels))

    print(f"Image: {size}x{size} seeded texture")
    print("\nBenchmarking... (this may take a few minutes)")

    results = []
    for fusion in VALID_FUSION:
        for dcn in sorted(VALID_DCN):
            try:
                print(f"  Testing {fusion}/{dcn}...", end=" ", flush=True)
                result = benchmark_extraction(image, fusion, dcn)
                results.append(result)
                print(f"{result.extraction_time_ms:.0f} ms ({result.keypoints} keypoints)")
            except Exception as e:
                print(f"Error: {e}")

    results.sort(key=lambda r: r.extraction_time_ms)

    print_results(results)


if __name__ == "__main__":
    main()
