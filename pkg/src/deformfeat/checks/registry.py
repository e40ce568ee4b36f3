"""Named self-checks grouped by module, run with per-check timing."""

import logging
import time
from dataclasses import dataclass
from typing import Callable

from deformfeat.errors import DeformFeatError

logger = logging.getLogger(__name__)

# Home modules in run order
CHECK_MODULES = ("numerics", "geometry", "dcn", "backbone", "detector", "match", "loss")


class CheckFailure(DeformFeatError):
    """Raised by a check whose invariant does not hold."""


@dataclass(frozen=True)
class CheckOptions:
    """Knobs shared by all checks.

    rotation_deg, translation and depth_range drive the synthetic camera
    pairs; perturb_dlt is added to every entry of the analytic DLT Jacobian.
    """

    seed: int = 0
    points: int = 100
    draws: int = 50
    homographies: int = 200
    rotation_deg: float = 5.0
    translation: float = 0.3
    depth_range: tuple[float, float] = (4.0, 8.0)
    perturb_dlt: float = 0.0
    threads: int = 1


@dataclass
class CheckResult:
    name: str
    module: str
    passed: bool
    detail: str
    elapsed: float

    @property
    def status(self) -> str:
        return "pass" if self.passed else "FAIL"


Check = Callable[[CheckOptions], str]


@dataclass(frozen=True)
class _Entry:
    module: str
    check: Check
    gradient: bool


class CheckRegistry:
    """Registry of check functions keyed by "module.name"."""

    _checks: dict[str, _Entry] = {}

    @classmethod
    def register(cls, module: str, name: str, gradient: bool = False) -> Callable[[Check], Check]:
        if module not in CHECK_MODULES:
            raise ValueError(f"Unknown check module: {module}")

        def decorator(check: Check) -> Check:
            cls._checks[f"{module}.{name}"] = _Entry(module, check, gradient)
            return check

        return decorator

    @classmethod
    def list_checks(cls, pattern: str = "", gradient_only: bool = False) -> list[str]:
        """Check names containing pattern, ordered by module then registration."""
        names = [
            name
            for name, entry in cls._checks.items()
            if pattern in name and (entry.gradient or not gradient_only)
        ]
        return sorted(names, key=lambda name: CHECK_MODULES.index(cls._checks[name].module))

    @classmethod
    def run(cls, options: CheckOptions, pattern: str = "", gradient_only: bool = False) -> list[CheckResult]:
        """Run the selected checks; failures and crashes are reported, never raised."""
        results = []
        for name in cls.list_checks(pattern, gradient_only):
            entry = cls._checks[name]
            start = time.perf_counter()
            try:
                detail = entry.check(options)
                passed = True
            except CheckFailure as e:
                detail, passed = str(e), False
            except Exception as e:
                logger.exception(f"Check {name} crashed")
                detail, passed = f"{type(e).__name__}: {e}", False
            elapsed = time.perf_counter() - start
            if passed:
                logger.debug(f"{name}: {detail} ({elapsed:.2f}s)")
            else:
                logger.error(f"{name} failed: {detail}")
            results.append(CheckResult(name, entry.module, passed, detail, elapsed))
        return results


def expect(condition: bool, message: str) -> None:
    """Raise CheckFailure with message unless condition holds."""
    if not condition:
        raise CheckFailure(message)
