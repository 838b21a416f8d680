"""Finite-difference verification of analytic gradients"""

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from beamcast.numcore.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Outcome of a gradient check: max relative error per input tensor"""

    errors: dict[str, float]
    tolerance: float
    notes: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(np.isfinite(e) and e < self.tolerance for e in self.errors.values())

    def failures(self) -> dict[str, float]:
        return {name: e for name, e in self.errors.items() if not (np.isfinite(e) and e < self.tolerance)}

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_error": self.max_error,
            "errors": dict(self.errors),
            "notes": list(self.notes),
        }

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = ", ".join(f"{k}={v:.2e}" for k, v in sorted(self.errors.items()))
        return f"gradcheck {status} (tol {self.tolerance:.0e}): {worst}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a|| + ||n||, floor)"""
    diff = np.linalg.norm((analytic - numeric).ravel())
    scale = np.linalg.norm(analytic.ravel()) + np.linalg.norm(numeric.ravel())
    return float(diff / max(scale, floor))


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_checks_per_input: Optional[int] = None,
    seed: int = 0,
    abs_floor: float = 1e-8,
) -> GradCheckReport:
    """
    Compare analytic gradients of `fn` against central finite differences.

    `fn` must rebuild its graph from the current `.data` of the input tensors on
    every call. Non-scalar outputs are reduced to a scalar by a fixed random
    projection so every output element contributes.

    Args:
        fn: zero-argument callable returning the output tensor
        inputs: name -> leaf tensor with requires_grad=True
        tolerance: maximum allowed relative error per input
        step: finite-difference step
        max_checks_per_input: probe only this many randomly chosen elements of
            large inputs (None = every element)
        seed: seed for the projection weights and element sampling
        abs_floor: denominator floor for near-zero gradients

    Returns:
        GradCheckReport with one relative error per input
    """
    rng = np.random.default_rng(seed)
    notes: list[str] = []
    for name, tensor in inputs.items():
        if tensor.dtype != np.float64:
            notes.append(f"{name} is {tensor.dtype}; finite differences need float64 for tight tolerances")
        tensor.zero_grad()

    out = fn()
    projection = rng.standard_normal(out.shape) if out.ndim else np.ones((), dtype=np.float64)
    projection = projection.astype(out.dtype)

    def objective() -> float:
        with no_grad():
            value = fn()
        return float(np.sum(value.data.astype(np.float64) * projection))

    out.backward(projection)

    errors: dict[str, float] = {}
    for name, tensor in inputs.items():
        analytic_full = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_checks_per_input is not None and flat.size > max_checks_per_input:
            positions = np.sort(rng.choice(flat.size, size=max_checks_per_input, replace=False))

        numeric = np.empty(positions.size, dtype=np.float64)
        for i, pos in enumerate(positions):
            original = flat[pos]
            flat[pos] = original + step
            plus = objective()
            flat[pos] = original - step
            minus = objective()
            flat[pos] = original
            numeric[i] = (plus - minus) / (2.0 * step)

        analytic = analytic_full.reshape(-1)[positions].astype(np.float64)
        errors[name] = relative_error(analytic, numeric, abs_floor)
        logger.debug("gradcheck %s: %d probes, rel err %.3e", name, positions.size, errors[name])

    return GradCheckReport(errors=errors, tolerance=tolerance, notes=notes)
