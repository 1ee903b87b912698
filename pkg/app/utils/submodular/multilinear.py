import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from app.core import settings
from app.core.errors import CapabilityError, InputError
from app.models.main_schema import GradientKind, GradientMode
from app.utils.submodular.setfn import ElementId, SetFunction, all_subset_masks

logger = logging.getLogger(__name__)


@dataclass
class GradientEstimate:
    components: np.ndarray
    kind: GradientKind
    samples: Optional[int] = None
    evaluations: int = 0

    def describe(self) -> str:
        if self.kind == GradientKind.EXACT:
            return "exact"
        return f"mc({self.samples})"


def check_point(fn: SetFunction, x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (fn.n,):
        raise InputError(
            f"{name} has shape {x.shape}, expected ({fn.n},).", "DIMENSION_MISMATCH"
        )
    if not np.all(np.isfinite(x)) or np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise InputError(f"{name} must lie in [0,1]^E.", "VALUE_RANGE")
    return np.clip(x, 0.0, 1.0)


def _check_enumerable(n: int) -> None:
    if n > settings.ENUMERATION_CAP:
        raise CapabilityError(
            f"Exact multilinear evaluation enumerates 2^{n} subsets; cap is n <= {settings.ENUMERATION_CAP}.",
            "ENUMERATION_CAP",
        )


def subset_weights(x: np.ndarray) -> np.ndarray:
    """Pr[X = S] for X ~ x, indexed by subset code (bit i = element i)."""
    weights = np.ones(1)
    for xi in x:
        weights = np.concatenate([weights * (1.0 - xi), weights * xi])
    return weights


def exact_extension(fn: SetFunction, x: np.ndarray) -> float:
    x = check_point(fn, x)
    _check_enumerable(fn.n)
    values = fn.evaluate_batch(all_subset_masks(fn.n))
    return float(subset_weights(x) @ values)


def mc_extension(fn: SetFunction, x: np.ndarray, samples: int, rng: np.random.Generator) -> float:
    x = check_point(fn, x)
    if samples < 1:
        raise InputError("samples must be >= 1.", "VALUE_RANGE")
    draws = rng.random((samples, fn.n)) < x
    return float(fn.evaluate_batch(draws).mean())


def _exact_gradient_from_values(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    codes = np.arange(values.size)
    grad = np.empty(x.size)
    for e in range(x.size):
        # Weights of x with x(e) = 0 vanish on subsets containing e.
        w = subset_weights(np.where(np.arange(x.size) == e, 0.0, x))
        grad[e] = w @ (values[codes | (1 << e)] - values)
    return grad


def exact_gradient(fn: SetFunction, x: np.ndarray) -> GradientEstimate:
    x = check_point(fn, x)
    _check_enumerable(fn.n)
    before = fn.evaluations
    values = fn.evaluate_batch(all_subset_masks(fn.n))
    return GradientEstimate(
        components=_exact_gradient_from_values(x, values),
        kind=GradientKind.EXACT,
        evaluations=fn.evaluations - before,
    )


def mc_gradient(fn: SetFunction, x: np.ndarray, samples: int, rng: np.random.Generator) -> GradientEstimate:
    """
    ∂f/∂x(e) ≈ mean of F(R+e) − F(R−e) over R ~ x, one shared sample set for
    every coordinate. Costs samples·(n+1) evaluations.
    """
    x = check_point(fn, x)
    if samples < 1:
        raise InputError("samples must be >= 1.", "VALUE_RANGE")
    before = fn.evaluations
    draws = rng.random((samples, fn.n)) < x
    base = fn.evaluate_batch(draws)
    grad = np.empty(fn.n)
    for e in range(fn.n):
        flipped = draws.copy()
        flipped[:, e] = ~draws[:, e]
        toggled = fn.evaluate_batch(flipped)
        grad[e] = np.where(draws[:, e], base - toggled, toggled - base).mean()
    return GradientEstimate(
        components=grad, kind=GradientKind.MC, samples=samples, evaluations=fn.evaluations - before
    )


def gradient(
    fn: SetFunction,
    x: np.ndarray,
    mode: GradientMode,
    rng: Optional[np.random.Generator] = None,
) -> GradientEstimate:
    if mode.kind == GradientKind.EXACT:
        return exact_gradient(fn, x)
    if rng is None:
        raise InputError("Monte-Carlo gradients need a random generator.", "MISSING_RNG")
    return mc_gradient(fn, x, mode.sample_count(fn.n, settings.MC_SAMPLE_FACTOR), rng)


def gradient_component(
    fn: SetFunction,
    x: np.ndarray,
    e: ElementId,
    mode: GradientMode,
    rng: Optional[np.random.Generator] = None,
) -> float:
    idx = fn.ground.index_of(e)
    if mode.kind == GradientKind.EXACT:
        x = check_point(fn, x)
        _check_enumerable(fn.n)
        values = fn.evaluate_batch(all_subset_masks(fn.n))
        codes = np.arange(values.size)
        w = subset_weights(np.where(np.arange(fn.n) == idx, 0.0, x))
        return float(w @ (values[codes | (1 << idx)] - values))
    return float(gradient(fn, x, mode, rng).components[idx])


def grad_inner_product(
    fn: SetFunction,
    x: np.ndarray,
    y: np.ndarray,
    mode: GradientMode,
    rng: Optional[np.random.Generator] = None,
) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (fn.n,):
        raise InputError(f"y has shape {y.shape}, expected ({fn.n},).", "DIMENSION_MISMATCH")
    return float(y @ gradient(fn, x, mode, rng).components)


def lipschitz_bound(n: int, rho: float) -> float:
    """|f(x) − f(x+v)| ≤ 4·n^{1/4}·√ρ whenever ‖v‖₂ ≤ ρ."""
    return 4.0 * n ** 0.25 * math.sqrt(rho)


def continuous_greedy_error_terms(n: int, rho: float) -> Dict[str, float]:
    return {"covering_lipschitz": lipschitz_bound(n, rho), "rho": rho}
