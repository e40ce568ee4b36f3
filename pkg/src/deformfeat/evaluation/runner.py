"""Run independent per-pair jobs on a thread pool with ordered results."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Generic, Optional, TypeVar

from deformfeat.errors import DeformFeatError

logger = logging.getLogger(__name__)

Job = TypeVar("Job")
Result = TypeVar("Result")


@dataclass
class JobOutcome(Generic[Result]):
    """Result of one job, or the error that stopped it."""

    index: int
    result: Optional[Result] = None
    error: Optional[DeformFeatError | OSError] = None


class PairRunner(Generic[Job, Result]):
    """Evaluate jobs concurrently; outcomes come back in submission order.

    A job failing with a DeformFeatError or OSError (bad data, missing or
    truncated files) is reported through on_error and its outcome carries the
    exception; other jobs are unaffected. Any other exception propagates.
    """

    def __init__(
        self,
        work: Callable[[int, Job], Result],
        threads: int = 1,
        on_error: Optional[Callable[[int, DeformFeatError | OSError], None]] = None,
    ):
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self._work = work
        self.threads = threads
        self._on_error = on_error

    def _run_one(self, index: int, job: Job) -> JobOutcome[Result]:
        try:
            return JobOutcome(index, result=self._work(index, job))
        except (DeformFeatError, OSError) as e:
            logger.warning(f"Job {index} failed: {e}")
            if self._on_error:
                self._on_error(index, e)
            return JobOutcome(index, error=e)

    def run(self, jobs: list[Job]) -> list[JobOutcome[Result]]:
        start = time.perf_counter()
        if self.threads == 1:
            outcomes = [self._run_one(i, job) for i, job in enumerate(jobs)]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                outcomes = list(pool.map(self._run_one, range(len(jobs)), jobs))
        logger.info(f"Ran {len(jobs)} jobs on {self.threads} thread(s) in {(time.perf_counter() - start) * 1000:.0f}ms")
        return outcomes
