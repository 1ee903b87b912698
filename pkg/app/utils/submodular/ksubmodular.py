import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core import settings
from app.core.errors import CapabilityError, InputError, InvariantViolation
from app.models.main_schema import Family, PrivacyParams
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.mechanism import MechanismTranscript, audit_single_step, exp_mechanism
from app.utils.submodular.setfn import (
    Dataset,
    DatasetOracle,
    ElementId,
    GroundSet,
    PropertyCheck,
)

logger = logging.getLogger(__name__)


@dataclass
class KAssignment:
    """labels[e] ∈ {0..k}; 0 means unassigned."""

    labels: np.ndarray
    k: int

    @classmethod
    def empty(cls, n: int, k: int) -> "KAssignment":
        return cls(labels=np.zeros(n, dtype=np.int64), k=k)

    @property
    def support_mask(self) -> np.ndarray:
        return self.labels != 0

    def support(self, ground: GroundSet) -> frozenset:
        return ground.subset_of(self.support_mask)

    def topics(self, ground: GroundSet) -> Dict[str, int]:
        return {str(ground.elements[i]): int(self.labels[i]) for i in np.flatnonzero(self.labels)}

    def assign(self, index: int, topic: int) -> "KAssignment":
        labels = self.labels.copy()
        labels[index] = topic
        return KAssignment(labels=labels, k=self.k)


class KSetFunction(DatasetOracle):
    """
    Oracle for a monotone k-submodular F_D: (k+1)^E -> [0,1]. Subclasses
    implement `_values` on an integer label matrix, one assignment per row.
    """

    def _prepare(self) -> None:
        if self.dataset.k < 1:
            raise InputError("Topic count k must be >= 1.", "VALUE_RANGE")
        self.k = self.dataset.k
        self._prepare_family()

    def _prepare_family(self) -> None:
        raise NotImplementedError

    def all_states(self) -> np.ndarray:
        states = (self.k + 1) ** self.n
        if states > settings.KSUB_STATE_CAP:
            raise CapabilityError(
                f"{states} assignments exceed the enumeration cap {settings.KSUB_STATE_CAP}.", "ENUMERATION_CAP"
            )
        return all_label_vectors(self.n, self.k)

    def _check_labels(self, labels: np.ndarray) -> np.ndarray:
        labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
        if labels.shape[1] != self.n:
            raise InputError(f"Assignment has {labels.shape[1]} entries, expected {self.n}.", "DIMENSION_MISMATCH")
        if np.any(labels < 0) or np.any(labels > self.k):
            raise InputError(f"Labels must lie in 0..{self.k}.", "VALUE_RANGE")
        return labels

    def evaluate(self, assignment: KAssignment) -> float:
        return float(self.evaluate_batch(assignment.labels)[0])

    def evaluate_batch(self, labels: np.ndarray) -> np.ndarray:
        labels = self._check_labels(labels)
        self._count(labels.shape[0])
        return self._values_chunked(labels)

    def marginal_ksub(self, assignment: KAssignment, e: ElementId, topic: int) -> float:
        idx = self.ground.index_of(e)
        if assignment.labels[idx] != 0:
            raise InputError(f"Element {e!r} is already assigned.", "ELEMENT_ASSIGNED")
        if not 1 <= topic <= self.k:
            raise InputError(f"Topic {topic} outside 1..{self.k}.", "VALUE_RANGE")
        rows = np.vstack([assignment.assign(idx, topic).labels, assignment.labels])
        values = self.evaluate_batch(rows)
        return float(values[0] - values[1])

    def get_summary(self) -> Dict[str, Any]:
        summary = super().get_summary()
        summary["k"] = self.k
        return summary


class KTopicCoverage(KSetFunction):
    """
    One record per right vertex v holding k neighbourhoods N_i(v) ⊆ U.
    F(S_1..S_k) = Σ_i |{v : N_i(v) ∩ S_i ≠ ∅}| / (k·|V|); a vertex reached on
    several topics counts once per topic.
    """

    family = Family.KTOPICS

    def _prepare_family(self) -> None:
        n_right = len(self.dataset.records)
        self._incidence = np.zeros((self.k, self.n, n_right), dtype=np.int32)
        for j, record in enumerate(self.dataset.records):
            if len(record) != self.k:
                raise InputError(f"Record {j} has {len(record)} topic sets, expected {self.k}.", "SCHEMA_MISMATCH")
            for i, neighbourhood in enumerate(record):
                for u in neighbourhood:
                    self._incidence[i, self.ground.index_of(u), j] = 1
        self._normalizer = float(self.k * max(1, n_right))

    def default_sensitivity(self) -> float:
        return self.k / self._normalizer

    def _values(self, labels: np.ndarray) -> np.ndarray:
        total = np.zeros(labels.shape[0])
        for i in range(self.k):
            chosen = (labels == i + 1).astype(np.int32)
            total += ((chosen @ self._incidence[i]) > 0).sum(axis=1)
        return total / self._normalizer


class KFacilityLocation(KSetFunction):
    """
    k resource types; each client record holds one similarity row per type.
    F = Σ_i Σ_c max_{e ∈ S_i} sim_i(c, e) / (k·#clients).
    """

    family = Family.KFACILITY

    def _prepare_family(self) -> None:
        records = self.dataset.records
        sims = np.zeros((self.k, len(records), self.n))
        for c, record in enumerate(records):
            rows = np.asarray(record, dtype=float)
            if rows.shape != (self.k, self.n):
                raise InputError(
                    f"Client {c} has similarity block {rows.shape}, expected ({self.k}, {self.n}).", "SCHEMA_MISMATCH"
                )
            sims[:, c, :] = rows
        if np.any(sims < 0) or np.any(sims > 1):
            raise InputError("Similarities must lie in [0,1].", "VALUE_RANGE")
        self._sims = sims
        self._normalizer = float(self.k * max(1, len(records)))

    def default_sensitivity(self) -> float:
        return self.k / self._normalizer

    def _values(self, labels: np.ndarray) -> np.ndarray:
        total = np.zeros(labels.shape[0])
        if self._sims.shape[1] == 0:
            return total
        for i in range(self.k):
            chosen = labels == i + 1
            picked = np.where(chosen[:, None, :], self._sims[i][None, :, :], 0.0)
            total += picked.max(axis=2).sum(axis=1)
        return total / self._normalizer


class SupportSize(KSetFunction):
    """F(s) = |supp(s)|/n. Holds no records; the declared sensitivity is nominal."""

    family = Family.SUPPORT

    def _prepare_family(self) -> None:
        self._normalizer = float(max(1, self.n))

    def default_sensitivity(self) -> float:
        return 1.0 / self._normalizer

    def _values(self, labels: np.ndarray) -> np.ndarray:
        return (labels != 0).sum(axis=1) / self._normalizer


K_FUNCTION_FAMILIES: Dict[Family, type] = {
    Family.KTOPICS: KTopicCoverage,
    Family.KFACILITY: KFacilityLocation,
    Family.SUPPORT: SupportSize,
}


def build_k_function(
    dataset: Dataset, sensitivity: Optional[float] = None, eval_budget: Optional[int] = None
) -> KSetFunction:
    try:
        cls = K_FUNCTION_FAMILIES[dataset.schema_tag]
    except KeyError:
        raise InputError(f"'{dataset.schema_tag.value}' is not a k-submodular family.", "SCHEMA_MISMATCH") from None
    return cls(dataset, sensitivity=sensitivity, eval_budget=eval_budget)


# --- Exhaustive checks ---

def all_label_vectors(n: int, k: int) -> np.ndarray:
    """Row c holds the base-(k+1) digits of c, least significant digit = element 0."""
    codes = np.arange((k + 1) ** n, dtype=np.int64)
    return (codes[:, None] // (k + 1) ** np.arange(n, dtype=np.int64)) % (k + 1)


def meet(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.where(s == t, s, 0)


def join(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Union per topic, dropping elements the two assignments label differently."""
    return np.where(s == 0, t, np.where(t == 0, s, np.where(s == t, s, 0)))


def meet_join_check(fn: KSetFunction, tol: float = 1e-12) -> PropertyCheck:
    states = (fn.k + 1) ** fn.n
    if states > settings.MEET_JOIN_STATE_CAP:
        raise CapabilityError(
            f"Pairwise check over {states} assignments exceeds cap {settings.MEET_JOIN_STATE_CAP}.",
            "ENUMERATION_CAP",
        )
    labels = all_label_vectors(fn.n, fn.k)
    values = fn._values_chunked(labels)
    radix = (fn.k + 1) ** np.arange(fn.n, dtype=np.int64)
    checked = 0
    for a in range(states):
        s = labels[a][None, :]
        lhs = values[a] + values
        rhs = values[meet(s, labels) @ radix] + values[join(s, labels) @ radix]
        checked += states
        bad = np.flatnonzero(lhs < rhs - tol)
        if bad.size:
            return PropertyCheck(
                "k-submodular", False, checked, f"violated at s={labels[a].tolist()} t={labels[bad[0]].tolist()}"
            )
    return PropertyCheck("k-submodular", True, checked)


def check_ksub_monotone(fn: KSetFunction, tol: float = 1e-12) -> PropertyCheck:
    labels = fn.all_states()
    values = fn._values_chunked(labels)
    radix = (fn.k + 1) ** np.arange(fn.n, dtype=np.int64)
    checked = 0
    for e in range(fn.n):
        free = np.flatnonzero(labels[:, e] == 0)
        for topic in range(1, fn.k + 1):
            gains = values[free + topic * radix[e]] - values[free]
            checked += free.size
            bad = np.flatnonzero(gains < -tol)
            if bad.size:
                return PropertyCheck(
                    "k-monotone", False, checked, f"negative gain for ({e},{topic}) at {labels[free[bad[0]]].tolist()}"
                )
    return PropertyCheck("k-monotone", True, checked)


# --- Greedy algorithms ---

@dataclass
class KsubResult:
    assignment: KAssignment
    transcript: MechanismTranscript
    evaluations: int
    failed: bool = False
    sample_sizes: List[int] = field(default_factory=list)
    retries_used: int = 0

    def get_summary(self, ground: GroundSet) -> Dict[str, Any]:
        return {
            "assignment": self.assignment.topics(ground),
            "evaluations": self.evaluations,
            "failed": self.failed,
            "sample_sizes": self.sample_sizes,
            "retries_used": self.retries_used,
            "privacy": self.transcript.get_summary(),
        }


def _check_ksub_inputs(fn: KSetFunction, matroid: Matroid) -> None:
    if fn.ground != matroid.ground:
        raise InputError("Function and matroid use different ground sets.", "GROUND_MISMATCH")
    if matroid.rank < 1:
        raise InputError("Matroid rank must be >= 1.", "VALUE_RANGE")


def _addable(matroid: Matroid, labels: np.ndarray, pool: Sequence[int]) -> List[int]:
    """Λ(x) ∩ pool, in ground order."""
    support = list(np.flatnonzero(labels))
    return [e for e in sorted(pool) if labels[e] == 0 and matroid.is_independent_idx(support + [e])]


def _choose_pair(
    fn: KSetFunction,
    labels: np.ndarray,
    elements: List[int],
    pp: PrivacyParams,
    rng: np.random.Generator,
    transcript: MechanismTranscript,
    shadow: Optional[KSetFunction],
) -> Tuple[int, int]:
    """Exponential mechanism over (e, i) ∈ elements × [k], ordered by element then topic."""
    candidates = [(e, i) for e in elements for i in range(1, fn.k + 1)]
    rows = np.repeat(labels[None, :], len(candidates), axis=0)
    for r, (e, i) in enumerate(candidates):
        rows[r, e] = i
    # F(x + (e,i)) differs from Δ_{e,i}F(x) by a constant, which the mechanism ignores.
    qualities = fn.evaluate_batch(rows)
    chosen = exp_mechanism(qualities, pp, rng, transcript, pp.epsilon)
    if shadow is not None:
        transcript.steps[-1].audit_ratio = audit_single_step(qualities, shadow.evaluate_batch(rows), pp)
    return candidates[chosen]


def dp_ksub_greedy(
    fn: KSetFunction,
    matroid: Matroid,
    pp: PrivacyParams,
    rng: np.random.Generator,
    shadow: Optional[KSetFunction] = None,
    keep_scores: bool = False,
) -> KsubResult:
    """r(M) rounds; each picks (e, i) with e ∈ Λ(x) with probability ∝ exp(ε'·Δ_{e,i}F(x))."""
    _check_ksub_inputs(fn, matroid)
    transcript = MechanismTranscript(keep_scores=keep_scores)
    labels = np.zeros(fn.n, dtype=np.int64)
    before = fn.evaluations
    logger.info("=== [KSUB GREEDY STARTED] n=%d k=%d rank=%d ===", fn.n, fn.k, matroid.rank)
    for t in range(matroid.rank):
        elements = _addable(matroid, labels, range(fn.n))
        if not elements:
            raise InvariantViolation(f"No addable element in round {t} before reaching the rank.", "EMPTY_CANDIDATES")
        e, i = _choose_pair(fn, labels, elements, pp, rng, transcript, shadow)
        labels[e] = i
        logger.debug("[Ksub Greedy] round %d assigned %r to topic %d", t, fn.ground.elements[e], i)
    result = KsubResult(
        assignment=KAssignment(labels=labels, k=fn.k), transcript=transcript, evaluations=fn.evaluations - before
    )
    logger.info("=== [KSUB GREEDY FINISHED] evaluations=%d ===", result.evaluations)
    return result


def sample_size(n: int, rank: int, t: int, gamma: float) -> int:
    """min(⌈(n−t+1)/(r−t+1)·ln(r/γ)⌉, n) for round t (1-based)."""
    if not 0 < gamma < 1:
        raise InputError("gamma must lie in (0,1).", "VALUE_RANGE")
    if not 1 <= t <= rank:
        raise InputError(f"Round {t} outside 1..{rank}.", "VALUE_RANGE")
    size = math.ceil((n - t + 1) / (rank - t + 1) * math.log(rank / gamma))
    return min(size, n)


def dp_ksub_greedy_sampled(
    fn: KSetFunction,
    matroid: Matroid,
    pp: PrivacyParams,
    gamma: float,
    rng: np.random.Generator,
    retries: int = 0,
    shadow: Optional[KSetFunction] = None,
    keep_scores: bool = False,
) -> KsubResult:
    """
    As dp_ksub_greedy, but each round only scores elements of a random subset
    R of the unassigned elements. An empty R ∩ Λ(x) stops the run with
    failed=True unless a retry (at most 3) is configured.
    """
    _check_ksub_inputs(fn, matroid)
    if not 0 <= retries <= 3:
        raise InputError("retries must lie in 0..3.", "VALUE_RANGE")
    transcript = MechanismTranscript(keep_scores=keep_scores)
    labels = np.zeros(fn.n, dtype=np.int64)
    before = fn.evaluations
    sizes: List[int] = []
    failed = False
    retries_used = 0
    logger.info("=== [KSUB SAMPLED STARTED] n=%d k=%d rank=%d gamma=%g ===", fn.n, fn.k, matroid.rank, gamma)
    for t in range(1, matroid.rank + 1):
        remaining = np.flatnonzero(labels == 0)
        size = min(sample_size(fn.n, matroid.rank, t, gamma), remaining.size)
        attempts = 0
        while True:
            pool = rng.choice(remaining, size=size, replace=False)
            elements = _addable(matroid, labels, pool.tolist())
            if elements or attempts >= retries:
                break
            attempts += 1
        sizes.append(size)
        retries_used += attempts
        if not elements:
            failed = True
            logger.warning("[Ksub Sampled] round %d: sampled set misses every addable element", t)
            break
        e, i = _choose_pair(fn, labels, elements, pp, rng, transcript, shadow)
        if attempts:
            transcript.steps[-1].deviation = f"resampled R {attempts} time(s)"
        labels[e] = i
    result = KsubResult(
        assignment=KAssignment(labels=labels, k=fn.k),
        transcript=transcript,
        evaluations=fn.evaluations - before,
        failed=failed,
        sample_sizes=sizes,
        retries_used=retries_used,
    )
    logger.info("=== [KSUB SAMPLED FINISHED] evaluations=%d failed=%s ===", result.evaluations, failed)
    return result


# --- Brute force ---

@dataclass
class KsubOptimum:
    assignment: KAssignment
    value: float
    max_support: int


def brute_force_ksub(fn: KSetFunction, matroid: Matroid) -> KsubOptimum:
    """Exact max of F over assignments whose support is independent."""
    if fn.ground != matroid.ground:
        raise InputError("Function and matroid use different ground sets.", "GROUND_MISMATCH")
    states = (fn.k + 1) ** fn.n
    if states > settings.KSUB_STATE_CAP:
        raise CapabilityError(
            f"{states} assignments exceed the enumeration cap {settings.KSUB_STATE_CAP}.", "ENUMERATION_CAP"
        )
    index_of = fn.ground.index_of
    best_labels = np.zeros(fn.n, dtype=np.int64)
    best_value = -math.inf
    best_support = 0
    for support in matroid.iter_independent_sets():
        idx = sorted(index_of(e) for e in support)
        combos = list(product(range(1, fn.k + 1), repeat=len(idx)))
        topics = np.array(combos, dtype=np.int64).reshape(len(combos), len(idx))
        rows = np.zeros((topics.shape[0], fn.n), dtype=np.int64)
        rows[:, idx] = topics
        values = fn.evaluate_batch(rows)
        top = int(np.argmax(values))
        if values[top] > best_value + 1e-12:
            best_value, best_labels, best_support = float(values[top]), rows[top].copy(), len(idx)
        elif values[top] >= best_value - 1e-12:
            best_support = max(best_support, len(idx))
    return KsubOptimum(assignment=KAssignment(labels=best_labels, k=fn.k), value=best_value, max_support=best_support)


# --- Synthetic instances ---

def random_ktopic_dataset(
    k: int, n_left: int, n_right: int, edge_prob: float, rng: np.random.Generator
) -> Dataset:
    universe = tuple(f"u{i + 1}" for i in range(n_left))
    records = tuple(
        tuple(frozenset(u for u in universe if rng.random() < edge_prob) for _ in range(k)) for _ in range(n_right)
    )
    return Dataset(records=records, schema_tag=Family.KTOPICS, universe=universe, k=k)


def random_kfacility_dataset(k: int, n_clients: int, n_sites: int, rng: np.random.Generator) -> Dataset:
    universe = tuple(f"s{i + 1}" for i in range(n_sites))
    records = tuple(
        tuple(tuple(float(v) for v in rng.random(n_sites)) for _ in range(k)) for _ in range(n_clients)
    )
    return Dataset(records=records, schema_tag=Family.KFACILITY, universe=universe, k=k)


def support_size_dataset(universe: Sequence[ElementId], k: int) -> Dataset:
    return Dataset(records=(), schema_tag=Family.SUPPORT, universe=tuple(universe), k=k)
