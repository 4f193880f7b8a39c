"""
Finite-difference verification of tape gradients
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.hierarchy.params import WORD_TOKENS, ModelParams
from src.numerics.errors import NonFiniteError
from src.numerics.tape import Matrix, Tape, backward
from src.utils.logger import logger

LossFunction = Callable[[ModelParams, Optional[Tape]], Matrix]

DEFAULT_ALWAYS_CHECK = ("merge.", WORD_TOKENS)
DEFAULT_TOLERANCE = 1e-4


class GradCheckError(Exception):
    """Exception raised when the loss cannot be evaluated during a gradient check"""
    pass


@dataclass
class GradCheckResult:
    """Worst disagreement between tape and finite-difference gradients"""

    max_error: float
    checked: int
    worst_name: str = ""
    worst_index: Tuple[int, ...] = ()
    per_parameter: Dict[str, float] = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        verdict = "ok" if self.passed else "FAILED"
        return (
            f"max relative error {self.max_error:.3e} over {self.checked} entries "
            f"(worst {self.worst_name}{list(self.worst_index)}) {verdict}"
        )


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dominating"""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _evaluate(loss_fn: LossFunction, params: ModelParams) -> float:
    try:
        value = loss_fn(params, None).item()
    except NonFiniteError as e:
        raise GradCheckError(f"loss is not finite: {e}") from e
    if not math.isfinite(value):
        raise GradCheckError(f"loss is not finite: {value}")
    return value


def select_entries(
    params: ModelParams,
    sample_fraction: float,
    always_check: Sequence[str],
    rng: np.random.Generator,
) -> Dict[str, np.ndarray]:
    """Flat indices to check per parameter: everything for `always_check` prefixes, a sample elsewhere"""
    chosen: Dict[str, np.ndarray] = {}
    for name in params:
        size = params[name].size
        if any(name.startswith(prefix) for prefix in always_check):
            chosen[name] = np.arange(size)
        else:
            count = min(size, max(1, int(round(sample_fraction * size))))
            chosen[name] = np.sort(rng.choice(size, size=count, replace=False))
    return chosen


def grad_check(
    loss_fn: LossFunction,
    params: ModelParams,
    eps: float = 1e-6,
    sample_fraction: float = 0.05,
    always_check: Sequence[str] = DEFAULT_ALWAYS_CHECK,
    seed: int = 0,
    gradients: Optional[Mapping[str, np.ndarray]] = None,
    floor: float = 1e-3,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckResult:
    """
    Compare tape gradients with central differences

    Args:
        loss_fn: Builds the scalar loss from parameters, on the tape when one is given
        params: Point to check at
        eps: Finite-difference step
        sample_fraction: Share of entries checked in parameters not listed in `always_check`
        always_check: Name prefixes whose entries are all checked
        seed: Seed for the sample
        gradients: Gradients to verify instead of a fresh backward pass
        floor: Denominator floor of the relative error
        tolerance: Error below which the check passes

    Returns:
        GradCheckResult with the maximum relative error

    Raises:
        GradCheckError: If the loss is not finite
    """
    if gradients is None:
        tape = Tape()
        try:
            loss = loss_fn(params, tape)
        except NonFiniteError as e:
            raise GradCheckError(f"loss is not finite: {e}") from e
        gradients = backward(tape, loss)

    rng = np.random.default_rng(seed)
    entries = select_entries(params, sample_fraction, always_check, rng)

    result = GradCheckResult(max_error=0.0, checked=0, tolerance=tolerance)
    for name, indices in entries.items():
        base = params[name]
        analytic = np.asarray(gradients.get(name, np.zeros(base.shape)), dtype=np.float64).reshape(-1)
        worst = 0.0
        for flat in indices:
            plus = base.copy().reshape(-1)
            minus = base.copy().reshape(-1)
            plus[flat] += eps
            minus[flat] -= eps
            # divide by the step actually taken after rounding
            step = plus[flat] - minus[flat]
            numeric = (
                _evaluate(loss_fn, params.replace({name: plus.reshape(base.shape)}))
                - _evaluate(loss_fn, params.replace({name: minus.reshape(base.shape)}))
            ) / step
            error = relative_error(float(analytic[flat]), numeric, floor)
            result.checked += 1
            worst = max(worst, error)
            if error > result.max_error:
                result.max_error = error
                result.worst_name = name
                result.worst_index = tuple(int(i) for i in np.unravel_index(flat, base.shape))
        result.per_parameter[name] = worst

    logger.debug(f"Gradient check: {result}")
    return result


def failing_parameters(result: GradCheckResult) -> List[str]:
    return [name for name, error in result.per_parameter.items() if error >= result.tolerance]
