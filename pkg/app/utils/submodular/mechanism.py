import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from app.core import settings
from app.core.errors import InputError
from app.models.main_schema import BudgetReport, PrivacyBudget, PrivacyParams

logger = logging.getLogger(__name__)


# --- Transcript ---

@dataclass
class TranscriptStep:
    step: int
    n_candidates: int
    chosen: int
    eps_step: float
    delta_step: float = 0.0
    scores: Optional[List[float]] = None
    audit_ratio: Optional[float] = None
    deviation: Optional[str] = None

    def to_line(self) -> Dict[str, Any]:
        line = {
            "step": self.step,
            "n_candidates": self.n_candidates,
            "chosen": self.chosen,
            "eps_step": self.eps_step,
            "delta_step": self.delta_step,
        }
        for key in ("scores", "audit_ratio", "deviation"):
            value = getattr(self, key)
            if value is not None:
                line[key] = value
        return line


@dataclass
class MechanismTranscript:
    """Per-run record of mechanism invocations. Scores are kept only when `keep_scores` is set."""

    keep_scores: bool = False
    steps: List[TranscriptStep] = field(default_factory=list)

    def record(
        self,
        n_candidates: int,
        chosen: int,
        eps_step: float,
        delta_step: float = 0.0,
        scores: Optional[np.ndarray] = None,
    ) -> TranscriptStep:
        entry = TranscriptStep(
            step=len(self.steps),
            n_candidates=n_candidates,
            chosen=chosen,
            eps_step=eps_step,
            delta_step=delta_step,
            scores=[float(s) for s in scores] if (self.keep_scores and scores is not None) else None,
        )
        self.steps.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def deviations(self) -> int:
        return sum(1 for s in self.steps if s.deviation)

    def basic_budget(self) -> Tuple[float, float]:
        return compose_basic((s.eps_step, s.delta_step) for s in self.steps)

    def advanced_budget(self, delta_prime: float) -> Tuple[float, float]:
        if not self.steps:
            return compose_advanced(0, 0.0, 0.0, delta_prime)
        eps0 = max(s.eps_step for s in self.steps)
        delta0 = max(s.delta_step for s in self.steps)
        return compose_advanced(len(self.steps), eps0, delta0, delta_prime)

    def budget_report(self, delta_prime: float) -> BudgetReport:
        basic, advanced = self.basic_budget(), self.advanced_budget(delta_prime)
        return BudgetReport(
            steps=len(self.steps),
            per_step_epsilon=max((s.eps_step for s in self.steps), default=0.0),
            basic=PrivacyBudget(epsilon=basic[0], delta=basic[1]),
            advanced=PrivacyBudget(epsilon=advanced[0], delta=advanced[1]),
            delta_prime=delta_prime,
        )

    def to_lines(self) -> List[Dict[str, Any]]:
        return [s.to_line() for s in self.steps]

    def get_summary(self) -> Dict[str, Any]:
        eps, delta = self.basic_budget()
        return {"steps": len(self.steps), "deviations": self.deviations, "basic": {"epsilon": eps, "delta": delta}}


# --- Exponential mechanism ---

def _validated_qualities(quality: Sequence[float]) -> np.ndarray:
    q = np.asarray(quality, dtype=float).ravel()
    if q.size == 0:
        raise InputError("Exponential mechanism needs at least one candidate.", "EMPTY_CANDIDATES")
    if not np.all(np.isfinite(q)):
        raise InputError("Candidate qualities must be finite.", "NON_FINITE_QUALITY")
    return q


def _argmax_regime(q: np.ndarray, pp: PrivacyParams) -> bool:
    if pp.is_argmax:
        return True
    return pp.score_scale * float(q.max() - q.min()) > settings.OVERFLOW_GUARD


def sample_from_log_weights(log_weights: np.ndarray, rng: np.random.Generator) -> int:
    """Draw index i with probability ∝ exp(log_weights[i]) from one uniform against the CDF."""
    shifted = np.exp(log_weights - np.max(log_weights))
    cdf = np.cumsum(shifted)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), cdf.size - 1))


def exp_mechanism_distribution(quality: Sequence[float], pp: PrivacyParams) -> np.ndarray:
    """Closed-form output distribution, including the deterministic argmax regime."""
    q = _validated_qualities(quality)
    if _argmax_regime(q, pp):
        probs = np.zeros(q.size)
        probs[int(np.argmax(q))] = 1.0
        return probs
    return np.exp(log_softmax(pp.score_scale * q))


def exp_mechanism(
    quality: Sequence[float],
    pp: PrivacyParams,
    rng: np.random.Generator,
    transcript: Optional[MechanismTranscript] = None,
    eps_step: Optional[float] = None,
) -> int:
    """
    Select candidate i with probability ∝ exp(ε'·q_i), ε' = ε/(2Δ).
    Falls back to the lowest-index argmax when ε' is infinite or ε'·(max−min)
    exceeds the overflow guard. `eps_step` is the privacy cost charged to the
    transcript (defaults to pp.epsilon).
    """
    q = _validated_qualities(quality)
    if _argmax_regime(q, pp):
        chosen = int(np.argmax(q))
    else:
        chosen = sample_from_log_weights(pp.score_scale * (q - q.max()), rng)
    if transcript is not None:
        transcript.record(
            n_candidates=q.size,
            chosen=chosen,
            eps_step=pp.epsilon if eps_step is None else eps_step,
            delta_step=pp.delta,
            scores=q,
        )
    return chosen


def em_utility_bound(n_candidates: int, pp: PrivacyParams, beta: float) -> float:
    """(2Δ/ε)·ln(n/β): with probability ≥ 1−β the chosen quality is within this of the max."""
    if not 0 < beta < 1:
        raise InputError("beta must lie in (0,1).", "VALUE_RANGE")
    if n_candidates < 1:
        raise InputError("n_candidates must be >= 1.", "VALUE_RANGE")
    if pp.is_argmax:
        return 0.0
    return (2.0 * pp.sensitivity / pp.epsilon) * math.log(n_candidates / beta)


# --- Composition ---

def compose_basic(steps: Iterable[Tuple[float, float]]) -> Tuple[float, float]:
    eps_total, delta_total = 0.0, 0.0
    for eps, delta in steps:
        if eps < 0 or delta < 0:
            raise InputError("Privacy parameters must be nonnegative.", "VALUE_RANGE")
        eps_total += eps
        delta_total += delta
    return eps_total, delta_total


def compose_advanced(k: int, eps0: float, delta0: float, delta_prime: float) -> Tuple[float, float]:
    """k-fold advanced composition: (½kε₀² + √(2 ln 1/δ')·ε₀, δ' + kδ₀)."""
    if delta_prime <= 0:
        raise InputError("delta_prime must be > 0.", "VALUE_RANGE")
    if k < 0 or eps0 < 0 or delta0 < 0:
        raise InputError("Composition inputs must be nonnegative.", "VALUE_RANGE")
    if k == 0:
        return 0.0, delta_prime
    eps = 0.5 * k * eps0 ** 2 + math.sqrt(2.0 * math.log(1.0 / delta_prime)) * eps0
    return eps, delta_prime + k * delta0


# --- Audit ---

def audit_single_step(
    quality_d: Sequence[float], quality_d_prime: Sequence[float], pp: PrivacyParams
) -> float:
    """max_i |ln p_i − ln p'_i| of the exact output distributions under both quality vectors."""
    q = _validated_qualities(quality_d)
    q_prime = _validated_qualities(quality_d_prime)
    if q.shape != q_prime.shape:
        raise InputError(
            f"Quality vectors differ in length ({q.size} vs {q_prime.size}).", "LENGTH_MISMATCH"
        )
    if q.size == 1:
        return 0.0
    if pp.is_argmax:
        same = int(np.argmax(q)) == int(np.argmax(q_prime))
        return 0.0 if same else math.inf
    log_p = log_softmax(pp.score_scale * q)
    log_p_prime = log_softmax(pp.score_scale * q_prime)
    return float(np.max(np.abs(log_p - log_p_prime)))

