"""Central finite differences against analytic Jacobians.

An entry passes when |analytic - numeric| <= tol (absolute, in the units of the partial).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from deformfeat.constants import GRADCHECK_STEP, GRADCHECK_TOL

logger = logging.getLogger(__name__)

Function = Callable[[np.ndarray], np.ndarray | float]
Jacobian = Callable[[np.ndarray], np.ndarray]


@dataclass
class GradcheckReport:
    """Outcome of one gradient check."""

    name: str
    max_abs_error: float = 0.0
    checked: int = 0
    failed_entries: int = 0
    nonsmooth: bool = False
    errors: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.nonsmooth and not self.errors and self.failed_entries == 0 and self.checked > 0

    @property
    def status(self) -> str:
        if self.nonsmooth:
            return "nonsmooth"
        return "pass" if self.passed else "fail"


def finite_difference(fn: Function, point: np.ndarray, step: float = GRADCHECK_STEP, threads: int = 1) -> np.ndarray:
    """Central-difference Jacobian (outputs, inputs) of fn at point."""
    x0 = np.asarray(point, dtype=np.float64).ravel()

    def column(j: int) -> np.ndarray:
        x = x0.copy()
        x[j] = x0[j] + step
        plus = np.atleast_1d(np.asarray(fn(x), dtype=np.float64)).ravel()
        x[j] = x0[j] - step
        minus = np.atleast_1d(np.asarray(fn(x), dtype=np.float64)).ravel()
        return (plus - minus) / (2.0 * step)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            columns = list(pool.map(column, range(x0.size)))
    else:
        columns = [column(j) for j in range(x0.size)]
    return np.stack(columns, axis=1)


def gradcheck(
    fn: Function,
    analytic: Jacobian,
    point: np.ndarray,
    step: float = GRADCHECK_STEP,
    tol: float = GRADCHECK_TOL,
    name: str = "",
    nonsmooth: Optional[Callable[[np.ndarray], bool]] = None,
    threads: int = 1,
) -> GradcheckReport:
    """Compare analytic partials with central differences for every input.

    A point flagged by nonsmooth is not evaluated. Evaluation errors are
    recorded in the report instead of propagating.
    """
    report = GradcheckReport(name=name)
    point = np.asarray(point, dtype=np.float64)
    if nonsmooth is not None and nonsmooth(point):
        report.nonsmooth = True
        logger.info(f"{name}: point lies on a non-smooth locus, skipped")
        return report

    try:
        numeric = finite_difference(fn, point, step, threads)
        expected = np.asarray(analytic(point), dtype=np.float64).reshape(numeric.shape)
    except Exception as e:
        report.errors.append(f"{type(e).__name__}: {e}")
        logger.warning(f"{name}: evaluation failed: {e}")
        return report

    difference = np.abs(expected - numeric)
    report.checked = int(difference.size)
    report.max_abs_error = float(difference.max()) if difference.size else 0.0
    report.failed_entries = int(np.sum(~(difference <= tol)))
    if report.failed_entries:
        logger.warning(f"{name}: {report.failed_entries}/{report.checked} partials off (max abs {report.max_abs_error:.2e})")
    return report
