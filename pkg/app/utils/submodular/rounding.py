import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Set, Tuple

import numpy as np
from scipy.optimize import linprog

from app.core.errors import InputError, InvariantViolation
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.multilinear import exact_extension
from app.utils.submodular.setfn import SetFunction

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-9
CLEAN_TOL = 1e-12
FACE_TOL = 1e-9
VERTEX_TOL = 1e-6


@dataclass
class ConvexCombination:
    """Σ λ_i·1_{I_i} ≈ target; each I_i is stored as a frozenset of ground indices."""

    parts: List[Tuple[float, frozenset]]
    target: np.ndarray
    matroid: Matroid

    @property
    def total_weight(self) -> float:
        return float(sum(w for w, _ in self.parts))

    def reconstruct(self) -> np.ndarray:
        out = np.zeros(self.target.size)
        for w, members in self.parts:
            out[list(members)] += w
        return out

    def residual_norm(self) -> float:
        return float(np.max(np.abs(self.reconstruct() - self.target), initial=0.0))

    def element_sets(self) -> List[Tuple[float, frozenset]]:
        elements = self.matroid.ground.elements
        return [(w, frozenset(elements[i] for i in members)) for w, members in self.parts]

    def get_summary(self) -> Dict[str, Any]:
        return {"parts": len(self.parts), "total_weight": self.total_weight, "residual": self.residual_norm()}


def _face_vertex(matroid: Matroid, residual: np.ndarray, remaining: float, tol: float) -> Optional[List[int]]:
    """
    Vertex of the smallest face of P(M) holding residual/remaining: an
    independent set inside the support that meets every tight row of
    A x <= b with equality. Ties go to elements with larger residual.
    """
    A, b = matroid.polytope_constraints
    support = residual > CLEAN_TOL
    tight = b * remaining - A @ residual <= tol
    loose = ~tight
    result = linprog(
        -residual,
        A_ub=A[loose] if loose.any() else None,
        b_ub=b[loose] if loose.any() else None,
        A_eq=A[tight] if tight.any() else None,
        b_eq=b[tight] if tight.any() else None,
        bounds=[(0.0, 1.0 if s else 0.0) for s in support],
        method="highs-ds",
        options={"presolve": False},
    )
    if result.status != 0:
        return None
    y = result.x
    if np.max(np.abs(y - np.round(y)), initial=0.0) > VERTEX_TOL:
        raise InvariantViolation("Face of the matroid polytope has a fractional vertex.", "DECOMPOSITION_STALLED")
    members = [int(i) for i in np.flatnonzero(y > 0.5)]
    if not matroid.is_independent_idx(members):
        raise InvariantViolation("Face vertex is not an independent set.", "DECOMPOSITION_STALLED")
    return members


def _step_length(matroid: Matroid, residual: np.ndarray, members: List[int], remaining: float) -> float:
    """Largest λ with residual − λ·1_I ≥ 0 and A(residual − λ·1_I) ≤ (remaining − λ)·b."""
    A, b = matroid.polytope_constraints
    direction = np.zeros(residual.size)
    direction[members] = 1.0
    growth = b - A @ direction
    slack = np.maximum(b * remaining - A @ residual, 0.0)
    limits = [float(residual[members].min()), remaining]
    binding = growth > RESIDUAL_TOL
    if binding.any():
        limits.append(float((slack[binding] / growth[binding]).min()))
    return min(limits)


def decompose(matroid: Matroid, x: np.ndarray) -> ConvexCombination:
    """
    Peel x ∈ P(M) into weighted independent sets. Each step takes a vertex I
    of the smallest face holding residual/(remaining mass) and the largest λ
    keeping (residual − λ·1_I)/(remaining mass − λ) inside P(M); the face
    shrinks every step, so λ stays positive.
    """
    x = np.asarray(x, dtype=float)
    if not matroid.polytope_contains(x):
        raise InputError("Point lies outside the matroid polytope.", "POINT_OUTSIDE_POLYTOPE")
    n = x.size
    residual = np.clip(x, 0.0, None)
    residual[residual < CLEAN_TOL] = 0.0
    consumed = 0.0
    parts: List[Tuple[float, frozenset]] = []
    guard = n * n + n

    while np.max(residual, initial=0.0) > RESIDUAL_TOL:
        if len(parts) >= guard:
            raise InvariantViolation(f"Decomposition exceeded {guard} parts.", "DECOMPOSITION_GUARD")
        remaining = 1.0 - consumed
        members = _face_vertex(matroid, residual, remaining, FACE_TOL)
        if members is None:
            members = _face_vertex(matroid, residual, remaining, CLEAN_TOL)
        if members is None:
            raise InvariantViolation("No vertex on the face of the residual.", "DECOMPOSITION_STALLED")
        if not members:
            raise InvariantViolation("Positive residual on loops only.", "DECOMPOSITION_STALLED")
        lam = _step_length(matroid, residual, members, remaining)
        if lam <= CLEAN_TOL:
            raise InvariantViolation("Decomposition stalled at a zero step.", "DECOMPOSITION_STALLED")
        residual[members] -= lam
        residual[np.abs(residual) < CLEAN_TOL] = 0.0
        residual = np.clip(residual, 0.0, None)
        consumed += lam
        parts.append((lam, frozenset(members)))

    combination = ConvexCombination(parts=parts, target=x, matroid=matroid)
    logger.debug("[Decompose] %d parts, weight %.6g", len(parts), combination.total_weight)
    return combination


@dataclass
class SwapRoundResult:
    base: frozenset
    merges: int
    deficit: float = 0.0
    notes: List[str] = field(default_factory=list)


def _pad_parts(matroid: Matroid, combination: ConvexCombination) -> Tuple[List[Tuple[float, Set[int]]], float, List[str]]:
    index_of = matroid.ground.index_of
    padded: List[Tuple[float, Set[int]]] = []
    for w, members in combination.element_sets():
        base = matroid.extend_to_base(members)
        padded.append((w, {index_of(e) for e in base}))
    notes: List[str] = []
    deficit = 1.0 - combination.total_weight
    if deficit > RESIDUAL_TOL:
        if padded:
            heaviest = max(range(len(padded)), key=lambda i: padded[i][0])
            w, members = padded[heaviest]
            padded[heaviest] = (w + deficit, members)
            notes.append(f"deficit {deficit:.6g} assigned to part {heaviest}")
        else:
            base = matroid.extend_to_base(())
            padded.append((1.0, {index_of(e) for e in base}))
            notes.append("empty combination replaced by the greedy base")
    return padded, max(0.0, deficit), notes


def _merge(
    matroid: Matroid, first: Set[int], w1: float, second: Set[int], w2: float, rng: np.random.Generator
) -> Tuple[Set[int], int]:
    b1, b2 = set(first), set(second)
    steps = 0
    while b1 != b2:
        e = min(b1 - b2)
        partner: Optional[int] = None
        for candidate in sorted(b2 - b1):
            if matroid.is_independent_idx((b2 - {candidate}) | {e}) and matroid.is_independent_idx(
                (b1 - {e}) | {candidate}
            ):
                partner = candidate
                break
        if partner is None:
            raise InvariantViolation("No symmetric exchange partner between two bases.", "EXCHANGE_FAILED")
        if rng.random() < w1 / (w1 + w2):
            b2 = (b2 - {partner}) | {e}
        else:
            b1 = (b1 - {e}) | {partner}
        steps += 1
    return b1, steps


def swap_round(matroid: Matroid, combination: ConvexCombination, rng: np.random.Generator) -> SwapRoundResult:
    """Merge the padded bases pairwise into one base. Never evaluates the objective."""
    padded, deficit, notes = _pad_parts(matroid, combination)
    weight, current = padded[0]
    merges = 0
    for w, members in padded[1:]:
        current, steps = _merge(matroid, current, weight, members, w, rng)
        weight += w
        merges += steps
    if len(current) != matroid.rank or not matroid.is_independent_idx(current):
        raise InvariantViolation("Swap rounding produced a non-base.", "NOT_A_BASE")
    elements = matroid.ground.elements
    return SwapRoundResult(base=frozenset(elements[i] for i in current), merges=merges, deficit=deficit, notes=notes)


@dataclass
class RoundingQuality:
    mean: float
    stderr: float
    exact: float
    rounds: int

    @property
    def passed(self) -> bool:
        return self.mean >= self.exact - 3.0 * self.stderr - 1e-12

    def get_summary(self) -> Dict[str, Any]:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "exact_extension": self.exact,
            "rounds": self.rounds,
            "passed": self.passed,
        }


def rounding_quality(
    fn: SetFunction, matroid: Matroid, x: np.ndarray, rounds: int, rng: np.random.Generator
) -> RoundingQuality:
    if rounds < 1:
        raise InputError("rounds must be >= 1.", "VALUE_RANGE")
    combination = decompose(matroid, x)
    exact = exact_extension(fn, x)
    masks = np.array(
        [fn.ground.mask_of(swap_round(matroid, combination, rng).base) for _ in range(rounds)], dtype=bool
    ).reshape(rounds, fn.n)
    values = fn.evaluate_batch(masks)
    stderr = float(values.std(ddof=1) / math.sqrt(rounds)) if rounds > 1 else 0.0
    return RoundingQuality(mean=float(values.mean()), stderr=stderr, exact=exact, rounds=rounds)
