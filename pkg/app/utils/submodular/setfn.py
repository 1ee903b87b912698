import logging
import threading
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Any, Callable, Dict, Hashable, Iterable, List, Optional, Tuple

import numpy as np

from app.core import settings
from app.core.errors import CapabilityError, InputError
from app.models.main_schema import Family

logger = logging.getLogger(__name__)

ElementId = Hashable


class GroundSet:
    """Ordered, duplicate-free element identifiers; position = coordinate index."""

    def __init__(self, elements: Iterable[ElementId]):
        self.elements: Tuple[ElementId, ...] = tuple(elements)
        self._index = {e: i for i, e in enumerate(self.elements)}
        if len(self._index) != len(self.elements):
            raise InputError("Ground set identifiers must be unique.", "DUPLICATE_ELEMENT")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __contains__(self, e: ElementId) -> bool:
        return e in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GroundSet) and self.elements == other.elements

    def __hash__(self) -> int:
        return hash(self.elements)

    def __repr__(self) -> str:
        return f"GroundSet({list(self.elements)})"

    def index_of(self, e: ElementId) -> int:
        try:
            return self._index[e]
        except KeyError:
            raise InputError(f"Unknown element identifier: {e!r}", "UNKNOWN_ELEMENT") from None

    def mask_of(self, subset: Iterable[ElementId]) -> np.ndarray:
        mask = np.zeros(len(self.elements), dtype=bool)
        for e in subset:
            mask[self.index_of(e)] = True
        return mask

    def subset_of(self, mask: np.ndarray) -> frozenset:
        return frozenset(self.elements[i] for i in np.flatnonzero(mask))

    def ordered(self, subset: Iterable[ElementId]) -> List[ElementId]:
        return sorted(subset, key=self.index_of)


@lru_cache(maxsize=8)
def all_subset_masks(n: int) -> np.ndarray:
    """One row per subset of range(n); row r contains element i iff bit i of r is set."""
    codes = np.arange(1 << n, dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)
    masks.setflags(write=False)
    return masks


@dataclass(frozen=True)
class Dataset:
    records: Tuple[Any, ...]
    schema_tag: Family
    universe: Tuple[ElementId, ...]
    k: int = 1

    def __len__(self) -> int:
        return len(self.records)


def _row_matrix(records, width: int) -> np.ndarray:
    if not records:
        return np.zeros((0, width))
    return np.asarray(records, dtype=float).reshape(len(records), -1)


class DatasetOracle:
    """
    Shared plumbing for dataset-backed oracles: schema check, ground set,
    declared sensitivity and a thread-safe evaluation counter with an
    optional budget.
    """

    family: Family

    def __init__(
        self,
        dataset: Dataset,
        sensitivity: Optional[float] = None,
        eval_budget: Optional[int] = None,
    ):
        if dataset.schema_tag != self.family:
            raise InputError(
                f"Dataset schema '{dataset.schema_tag.value}' does not match family '{self.family.value}'.",
                "SCHEMA_MISMATCH",
            )
        self.dataset = dataset
        self.ground = GroundSet(dataset.universe)
        self.eval_budget = eval_budget
        self._evaluations = 0
        self._lock = threading.Lock()
        self._prepare()
        self.sensitivity = float(sensitivity) if sensitivity is not None else self.default_sensitivity()

    # --- family hooks ---

    def _prepare(self) -> None:
        raise NotImplementedError

    def _values(self, rows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def default_sensitivity(self) -> float:
        raise NotImplementedError

    def all_states(self) -> np.ndarray:
        """Every input of the oracle, one per row, for exhaustive checks."""
        raise NotImplementedError

    # --- counter ---

    @property
    def evaluations(self) -> int:
        return self._evaluations

    def reset_counter(self) -> None:
        with self._lock:
            self._evaluations = 0

    def _count(self, amount: int) -> None:
        with self._lock:
            self._evaluations += amount
            if self.eval_budget is not None and self._evaluations > self.eval_budget:
                raise CapabilityError(
                    f"Evaluation budget of {self.eval_budget} exceeded.", "EVAL_BUDGET_EXCEEDED"
                )

    @property
    def n(self) -> int:
        return len(self.ground)

    def _values_chunked(self, rows: np.ndarray) -> np.ndarray:
        """Uncounted evaluation in BATCH_ROWS slices; used by exhaustive checks."""
        out = np.empty(rows.shape[0], dtype=float)
        step = settings.BATCH_ROWS
        for start in range(0, rows.shape[0], step):
            out[start:start + step] = self._values(rows[start:start + step])
        return out

    def with_dataset(self, dataset: Dataset):
        """Same family and declared sensitivity over another (e.g. neighbouring) dataset."""
        return type(self)(dataset, sensitivity=self.sensitivity, eval_budget=self.eval_budget)

    def get_summary(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "n_elements": self.n,
            "n_records": len(self.dataset),
            "sensitivity": self.sensitivity,
            "evaluations": self.evaluations,
        }


class SetFunction(DatasetOracle):
    """
    Oracle for a monotone submodular F_D: 2^E -> [0,1] backed by a dataset.
    Subclasses implement `_values` on a boolean matrix, one subset per row.
    Every evaluated subset increments the evaluation counter by one.
    """

    def all_states(self) -> np.ndarray:
        if self.n > settings.SENSITIVITY_CAP:
            raise CapabilityError(
                f"Exhaustive enumeration of 2^{self.n} subsets exceeds cap n <= {settings.SENSITIVITY_CAP}.",
                "ENUMERATION_CAP",
            )
        return all_subset_masks(self.n)

    def evaluate(self, subset: Iterable[ElementId]) -> float:
        return self.evaluate_mask(self.ground.mask_of(subset))

    def evaluate_mask(self, mask: np.ndarray) -> float:
        self._count(1)
        return float(self._values(np.asarray(mask, dtype=bool)[None, :])[0])

    def evaluate_batch(self, masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks, dtype=bool)
        self._count(masks.shape[0])
        return self._values_chunked(masks)

    def marginal_gain(self, subset: Iterable[ElementId], e: ElementId) -> float:
        subset = frozenset(subset)
        if e in subset:
            raise InputError(f"Element {e!r} already belongs to the set.", "ELEMENT_PRESENT")
        mask = self.ground.mask_of(subset)
        with_e = mask.copy()
        with_e[self.ground.index_of(e)] = True
        values = self.evaluate_batch(np.vstack([with_e, mask]))
        return float(values[0] - values[1])


class CoverageFunction(SetFunction):
    """
    Bipartite coverage. Ground set = left vertices U; one record per right
    vertex v holding its neighbourhood N(v) in U. F(S) = |{v : N(v) ∩ S ≠ ∅}| / |V|.
    """

    family = Family.COVERAGE

    def _prepare(self) -> None:
        n_right = len(self.dataset.records)
        self._incidence = np.zeros((len(self.ground), n_right), dtype=np.int32)
        for j, record in enumerate(self.dataset.records):
            for u in record:
                self._incidence[self.ground.index_of(u), j] = 1
        self._normalizer = float(max(1, n_right))

    def default_sensitivity(self) -> float:
        return 1.0 / self._normalizer

    def _values(self, masks: np.ndarray) -> np.ndarray:
        covered = (masks.astype(np.int32) @ self._incidence) > 0
        return covered.sum(axis=1) / self._normalizer


class FacilityLocationFunction(SetFunction):
    """Ground set = sites; one similarity row per client. F(S) = mean_c max_{e∈S} sim(c, e)."""

    family = Family.FACILITY

    def _prepare(self) -> None:
        sims = _row_matrix(self.dataset.records, len(self.ground))
        if sims.shape[1] != len(self.ground):
            raise InputError("Similarity rows must have one entry per site.", "SCHEMA_MISMATCH")
        if np.any(sims < 0) or np.any(sims > 1):
            raise InputError("Similarities must lie in [0,1].", "VALUE_RANGE")
        self._sims = sims
        self._normalizer = float(max(1, sims.shape[0]))

    def default_sensitivity(self) -> float:
        return 1.0 / self._normalizer

    def _values(self, masks: np.ndarray) -> np.ndarray:
        if self._sims.shape[0] == 0:
            return np.zeros(masks.shape[0])
        picked = np.where(masks[:, None, :], self._sims[None, :, :], 0.0)
        return picked.max(axis=2).sum(axis=1) / self._normalizer


class AverageFunction(SetFunction):
    """
    CPP averaging F_D = (1/n) Σ_i F_i with budget-additive private functions
    F_i(S) = min(1, Σ_{e∈S} w_i(e)); one weight row per individual.
    """

    family = Family.AVERAGE

    def _prepare(self) -> None:
        weights = _row_matrix(self.dataset.records, len(self.ground))
        if weights.shape[1] != len(self.ground):
            raise InputError("Weight rows must have one entry per element.", "SCHEMA_MISMATCH")
        if np.any(weights < 0):
            raise InputError("Weights must be nonnegative.", "VALUE_RANGE")
        self._weights = weights
        self._normalizer = float(max(1, weights.shape[0]))

    def default_sensitivity(self) -> float:
        return 1.0 / self._normalizer

    def _values(self, masks: np.ndarray) -> np.ndarray:
        if self._weights.shape[0] == 0:
            return np.zeros(masks.shape[0])
        totals = masks.astype(float) @ self._weights.T
        return np.minimum(1.0, totals).sum(axis=1) / self._normalizer


SET_FUNCTION_FAMILIES: Dict[Family, type] = {
    Family.COVERAGE: CoverageFunction,
    Family.FACILITY: FacilityLocationFunction,
    Family.AVERAGE: AverageFunction,
}


def build_set_function(
    dataset: Dataset,
    sensitivity: Optional[float] = None,
    eval_budget: Optional[int] = None,
) -> SetFunction:
    try:
        cls = SET_FUNCTION_FAMILIES[dataset.schema_tag]
    except KeyError:
        raise InputError(
            f"'{dataset.schema_tag.value}' is not a set-function family.", "SCHEMA_MISMATCH"
        ) from None
    return cls(dataset, sensitivity=sensitivity, eval_budget=eval_budget)


# --- Neighbouring datasets ---

def _random_edge_set(universe, max_size: int, rng: np.random.Generator) -> frozenset:
    size = int(rng.integers(0, max_size + 1))
    picks = rng.choice(len(universe), size=min(size, len(universe)), replace=False)
    return frozenset(universe[i] for i in picks)


def _coverage_record(dataset: Dataset, rng: np.random.Generator):
    d_max = max((len(r) for r in dataset.records), default=1)
    return _random_edge_set(dataset.universe, d_max, rng)


def _row_record(dataset: Dataset, rng: np.random.Generator):
    return tuple(float(v) for v in rng.random(len(dataset.universe)))


def _weight_record(dataset: Dataset, rng: np.random.Generator):
    scale = max((max(r) for r in dataset.records if len(r)), default=0.0)
    scale = scale or 1.0 / max(1, len(dataset.universe))
    return tuple(float(v) for v in rng.uniform(0.0, scale, len(dataset.universe)))


def _ktopic_record(dataset: Dataset, rng: np.random.Generator):
    d_max = max((len(s) for r in dataset.records for s in r), default=1)
    return tuple(_random_edge_set(dataset.universe, d_max, rng) for _ in range(dataset.k))


def _krow_record(dataset: Dataset, rng: np.random.Generator):
    return tuple(_row_record(dataset, rng) for _ in range(dataset.k))


RECORD_SAMPLERS: Dict[Family, Callable[[Dataset, np.random.Generator], Any]] = {
    Family.COVERAGE: _coverage_record,
    Family.FACILITY: _row_record,
    Family.AVERAGE: _weight_record,
    Family.KTOPICS: _ktopic_record,
    Family.KFACILITY: _krow_record,
}

NEIGHBOR_GENERATORS: Dict[Family, str] = {
    Family.COVERAGE: "uniform edge set of size <= max record degree",
    Family.FACILITY: "iid uniform[0,1] similarity row",
    Family.AVERAGE: "iid uniform[0, max weight] weight row",
    Family.KTOPICS: "per-topic uniform edge sets of size <= max topic degree",
    Family.KFACILITY: "per-topic iid uniform[0,1] similarity rows",
}


def make_neighbor(dataset: Dataset, index: int, rng: np.random.Generator) -> Dataset:
    """Replace record `index` with a freshly drawn record of the same schema."""
    if not 0 <= index < len(dataset.records):
        raise InputError(
            f"Record index {index} out of range for {len(dataset.records)} records.", "INDEX_RANGE"
        )
    sampler = RECORD_SAMPLERS.get(dataset.schema_tag)
    if sampler is None:
        raise InputError(f"No neighbour generator for '{dataset.schema_tag.value}'.", "SCHEMA_MISMATCH")
    records = list(dataset.records)
    records[index] = sampler(dataset, rng)
    return replace(dataset, records=tuple(records))


@dataclass
class SensitivityReport:
    measured: float
    declared: float
    trials: int
    generator: str

    @property
    def within_bound(self) -> bool:
        return self.measured <= self.declared + 1e-12


def measure_sensitivity(
    fn: DatasetOracle,
    trials: int,
    rng: np.random.Generator,
    neighbors: Optional[List[Dataset]] = None,
) -> SensitivityReport:
    """
    Max over sampled neighbours and all oracle inputs of |F_D(S) - F_D'(S)|.
    Explicit `neighbors` replace the random draws.
    """
    if trials < 1:
        raise InputError("trials must be >= 1.", "VALUE_RANGE")
    states = fn.all_states()
    base = fn._values_chunked(states)
    if neighbors is None:
        if len(fn.dataset) == 0:
            raise InputError("Dataset has no records to replace.", "INDEX_RANGE")
        neighbors = [
            make_neighbor(fn.dataset, int(rng.integers(0, len(fn.dataset))), rng) for _ in range(trials)
        ]
    measured = 0.0
    for other in neighbors:
        values = fn.with_dataset(other)._values_chunked(states)
        measured = max(measured, float(np.max(np.abs(base - values))))
    report = SensitivityReport(
        measured=measured,
        declared=fn.sensitivity,
        trials=len(neighbors),
        generator=NEIGHBOR_GENERATORS.get(fn.family, "explicit"),
    )
    logger.info("[Sensitivity] %s measured=%.6g declared=%.6g", fn.family.value, measured, fn.sensitivity)
    return report


# --- Exhaustive property checks ---

@dataclass
class PropertyCheck:
    name: str
    passed: bool
    checked: int
    violation: Optional[str] = None


def _subset_values(fn: SetFunction) -> np.ndarray:
    return fn._values_chunked(fn.all_states())


def check_monotone(fn: SetFunction, tol: float = 1e-12) -> PropertyCheck:
    values = _subset_values(fn)
    codes = np.arange(values.size)
    checked = 0
    for e in range(fn.n):
        without = codes[(codes >> e) & 1 == 0]
        gains = values[without | (1 << e)] - values[without]
        checked += without.size
        bad = np.flatnonzero(gains < -tol)
        if bad.size:
            s = fn.ground.subset_of(all_subset_masks(fn.n)[without[bad[0]]])
            return PropertyCheck("monotone", False, checked, f"F(S+{fn.ground.elements[e]!r}) < F(S) at S={sorted(map(str, s))}")
    return PropertyCheck("monotone", True, checked)


def check_submodular(fn: SetFunction, tol: float = 1e-12) -> PropertyCheck:
    """Local diminishing-returns condition, equivalent to submodularity: for all S, e, f ∉ S."""
    values = _subset_values(fn)
    codes = np.arange(values.size)
    checked = 0
    for e in range(fn.n):
        for f in range(fn.n):
            if e == f:
                continue
            base = codes[((codes >> e) & 1 == 0) & ((codes >> f) & 1 == 0)]
            gain_small = values[base | (1 << e)] - values[base]
            grown = base | (1 << f)
            gain_large = values[grown | (1 << e)] - values[grown]
            checked += base.size
            bad = np.flatnonzero(gain_small < gain_large - tol)
            if bad.size:
                s = fn.ground.subset_of(all_subset_masks(fn.n)[base[bad[0]]])
                return PropertyCheck(
                    "submodular",
                    False,
                    checked,
                    f"gain of {fn.ground.elements[e]!r} grows after adding {fn.ground.elements[f]!r} to {sorted(map(str, s))}",
                )
    return PropertyCheck("submodular", True, checked)


# --- Synthetic instances ---

def random_coverage_dataset(
    n_left: int, n_right: int, edge_prob: float, rng: np.random.Generator
) -> Dataset:
    universe = tuple(f"u{i + 1}" for i in range(n_left))
    records = tuple(
        frozenset(u for u in universe if rng.random() < edge_prob) for _ in range(n_right)
    )
    return Dataset(records=records, schema_tag=Family.COVERAGE, universe=universe)


def random_facility_dataset(n_clients: int, n_sites: int, rng: np.random.Generator) -> Dataset:
    universe = tuple(f"s{i + 1}" for i in range(n_sites))
    records = tuple(tuple(float(v) for v in rng.random(n_sites)) for _ in range(n_clients))
    return Dataset(records=records, schema_tag=Family.FACILITY, universe=universe)


def random_average_dataset(n_records: int, n_elements: int, rng: np.random.Generator) -> Dataset:
    universe = tuple(f"e{i + 1}" for i in range(n_elements))
    records = tuple(
        tuple(float(v) for v in rng.uniform(0.0, 2.0 / n_elements, n_elements)) for _ in range(n_records)
    )
    return Dataset(records=records, schema_tag=Family.AVERAGE, universe=universe)


def modular_dataset(weights: Dict[ElementId, float]) -> Dataset:
    """A single budget-additive record; modular whenever the weights sum to at most 1."""
    universe = tuple(weights)
    return Dataset(
        records=(tuple(float(weights[e]) for e in universe),),
        schema_tag=Family.AVERAGE,
        universe=universe,
    )
