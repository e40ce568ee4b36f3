"""Self-test suite: invariant, oracle and gradient checks per module."""

from . import gradients, invariants  # noqa: F401  (registers the checks)
from .registry import CHECK_MODULES, CheckFailure, CheckOptions, CheckRegistry, CheckResult

__all__ = [
    "CHECK_MODULES",
    "CheckFailure",
    "CheckOptions",
    "CheckRegistry",
    "CheckResult",
]
