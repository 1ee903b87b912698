import logging
from functools import cached_property
from itertools import combinations
from typing import Dict, Hashable, Iterable, Iterator, List, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from app.core import settings
from app.core.errors import CapabilityError, InputError, InvariantViolation
from app.models.main_schema import MatroidKind
from app.utils.submodular.setfn import ElementId, GroundSet

logger = logging.getLogger(__name__)


class Matroid:
    """
    Independence / rank oracle over an ordered ground set. Immutable after
    construction. Subclasses implement `_independent` on index lists and
    `_constraints` describing P(M) as {x >= 0 : A x <= b}.
    """

    kind: MatroidKind

    def __init__(self, ground: GroundSet):
        self.ground = ground

    # --- subclass hooks ---

    def _independent(self, idx: Sequence[int]) -> bool:
        raise NotImplementedError

    def _constraints(self) -> Tuple[np.ndarray, np.ndarray]:
        # Generic x(S) <= r(S) for every nonempty S.
        n = len(self.ground)
        if n > settings.ENUMERATION_CAP:
            raise CapabilityError(
                f"Generic polytope check enumerates 2^{n} subsets.", "ENUMERATION_CAP"
            )
        rows, bounds = [], []
        for size in range(1, n + 1):
            for combo in combinations(range(n), size):
                row = np.zeros(n)
                row[list(combo)] = 1.0
                rows.append(row)
                bounds.append(self._rank_idx(combo))
        return np.array(rows), np.array(bounds, dtype=float)

    def describe(self) -> str:
        raise NotImplementedError

    # --- oracles ---

    def _indices(self, subset: Iterable[ElementId]) -> List[int]:
        return sorted({self.ground.index_of(e) for e in subset})

    def is_independent(self, subset: Iterable[ElementId]) -> bool:
        return self._independent(self._indices(subset))

    def is_independent_idx(self, idx: Iterable[int]) -> bool:
        return self._independent(sorted(idx))

    def _rank_idx(self, idx: Sequence[int]) -> int:
        chosen: List[int] = []
        for i in idx:
            if self._independent(chosen + [i]):
                chosen.append(i)
        return len(chosen)

    def rank_of(self, subset: Iterable[ElementId]) -> int:
        return self._rank_idx(self._indices(subset))

    @cached_property
    def rank(self) -> int:
        return self._rank_idx(range(len(self.ground)))

    def is_base(self, subset: Iterable[ElementId]) -> bool:
        idx = self._indices(subset)
        return len(idx) == self.rank and self._independent(idx)

    def extend_to_base(self, subset: Iterable[ElementId]) -> frozenset:
        """Greedy extension in ground-set order of an independent set to a base."""
        chosen = self._indices(subset)
        if not self._independent(chosen):
            raise InputError("Cannot extend a dependent set to a base.", "DEPENDENT_SET")
        members = set(chosen)
        for i in range(len(self.ground)):
            if len(chosen) == self.rank:
                break
            if i not in members and self._independent(chosen + [i]):
                chosen.append(i)
                members.add(i)
        return frozenset(self.ground.elements[i] for i in chosen)

    def base_exchange(
        self, independent: Iterable[ElementId], base: Iterable[ElementId], e: ElementId
    ) -> ElementId:
        """
        Given A ⊆ B with B a base and A + e independent, return the first
        e' ∈ B \\ A (ground order) such that B - e' + e is a base.
        """
        a_set, b_set = frozenset(independent), frozenset(base)
        if not a_set <= b_set:
            raise InputError("Independent set must be contained in the base.", "EXCHANGE_PRECONDITION")
        if not self.is_base(b_set):
            raise InputError("Second argument is not a base.", "EXCHANGE_PRECONDITION")
        if e in a_set:
            raise InputError(f"Element {e!r} already in the independent set.", "EXCHANGE_PRECONDITION")
        if not self.is_independent(a_set | {e}):
            raise InputError("A + e is not independent.", "EXCHANGE_PRECONDITION")
        if e in b_set:
            return e
        for candidate in self.ground.ordered(b_set - a_set):
            if self.is_independent((b_set - {candidate}) | {e}):
                return candidate
        raise InvariantViolation(
            f"No exchange partner for {e!r}; matroid axioms violated.", "EXCHANGE_FAILED"
        )

    def random_base(self, rng: np.random.Generator) -> frozenset:
        chosen: List[int] = []
        for i in rng.permutation(len(self.ground)):
            if self._independent(sorted(chosen + [int(i)])):
                chosen.append(int(i))
        return frozenset(self.ground.elements[i] for i in chosen)

    def iter_independent_sets(self) -> Iterator[frozenset]:
        """All independent sets (∅ first), pruned by downward closure."""
        n = len(self.ground)

        def extend(current: List[int], start: int) -> Iterator[List[int]]:
            yield current
            for i in range(start, n):
                candidate = current + [i]
                if self._independent(candidate):
                    yield from extend(candidate, i + 1)

        for idx in extend([], 0):
            yield frozenset(self.ground.elements[i] for i in idx)

    # --- polytope ---

    @cached_property
    def polytope_constraints(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._constraints()

    def _check_dimension(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(self.ground):
            raise InputError(
                f"Point has dimension {x.shape[-1]}, ground set has {len(self.ground)} elements.",
                "DIMENSION_MISMATCH",
            )
        if not np.all(np.isfinite(x)):
            raise InputError("Point coordinates must be finite.", "VALUE_RANGE")
        return x

    def polytope_contains(self, x: np.ndarray, tol: float = settings.POLYTOPE_TOL) -> bool:
        x = self._check_dimension(x)
        return bool(self.polytope_contains_batch(x[None, :], tol)[0])

    def polytope_contains_batch(self, points: np.ndarray, tol: float = settings.POLYTOPE_TOL) -> np.ndarray:
        points = self._check_dimension(np.atleast_2d(points))
        A, b = self.polytope_constraints
        nonneg = np.all(points >= -tol, axis=1)
        if A.shape[0] == 0:
            return nonneg
        return nonneg & np.all(points @ A.T <= b + tol, axis=1)

    def get_summary(self) -> Dict[str, object]:
        return {"kind": self.kind.value, "rank": self.rank, "n_elements": len(self.ground), "spec": self.describe()}


class UniformMatroid(Matroid):
    kind = MatroidKind.UNIFORM

    def __init__(self, ground: GroundSet, capacity: int):
        if capacity < 0:
            raise InputError("Uniform matroid capacity must be >= 0.", "VALUE_RANGE")
        super().__init__(ground)
        self.capacity = capacity

    def _independent(self, idx: Sequence[int]) -> bool:
        return len(idx) <= self.capacity

    def _rank_idx(self, idx: Sequence[int]) -> int:
        return min(len(idx), self.capacity)

    def _constraints(self) -> Tuple[np.ndarray, np.ndarray]:
        n = len(self.ground)
        A = np.vstack([np.eye(n), np.ones((1, n))])
        b = np.concatenate([np.full(n, float(min(1, self.capacity))), [float(self.capacity)]])
        return A, b

    def describe(self) -> str:
        return f"uniform {self.capacity}"


class PartitionMatroid(Matroid):
    kind = MatroidKind.PARTITION

    def __init__(self, ground: GroundSet, blocks: Sequence[Tuple[Sequence[ElementId], int]]):
        super().__init__(ground)
        self.blocks = [(tuple(members), int(cap)) for members, cap in blocks]
        self._block_of = np.full(len(ground), -1, dtype=int)
        for b, (members, cap) in enumerate(self.blocks):
            if cap < 0:
                raise InputError("Block capacities must be >= 0.", "VALUE_RANGE")
            for e in members:
                i = ground.index_of(e)
                if self._block_of[i] != -1:
                    raise InputError(f"Element {e!r} appears in two blocks.", "PARTITION_OVERLAP")
                self._block_of[i] = b
        missing = [ground.elements[i] for i in np.flatnonzero(self._block_of == -1)]
        if missing:
            raise InputError(f"Elements not covered by any block: {missing}", "PARTITION_INCOMPLETE")
        self._caps = np.array([cap for _, cap in self.blocks], dtype=int)

    def _independent(self, idx: Sequence[int]) -> bool:
        counts = np.bincount(self._block_of[list(idx)], minlength=len(self.blocks))
        return bool(np.all(counts <= self._caps))

    def _rank_idx(self, idx: Sequence[int]) -> int:
        counts = np.bincount(self._block_of[list(idx)], minlength=len(self.blocks))
        return int(np.minimum(counts, self._caps).sum())

    def _constraints(self) -> Tuple[np.ndarray, np.ndarray]:
        n = len(self.ground)
        block_rows = np.zeros((len(self.blocks), n))
        block_rows[self._block_of, np.arange(n)] = 1.0
        A = np.vstack([np.eye(n), block_rows])
        b = np.concatenate([np.minimum(1, self._caps[self._block_of]).astype(float), self._caps.astype(float)])
        return A, b

    def describe(self) -> str:
        parts = [f"{','.join(map(str, members))}:{cap}" for members, cap in self.blocks]
        return "partition " + " ".join(parts)


class GraphicMatroid(Matroid):
    """Cycle matroid of a multigraph; each ground element is one edge."""

    kind = MatroidKind.GRAPHIC

    def __init__(self, n_vertices: int, edges: Sequence[Tuple[ElementId, Hashable, Hashable]]):
        super().__init__(GroundSet(eid for eid, _, _ in edges))
        self.n_vertices = n_vertices
        self.graph = nx.MultiGraph()
        for eid, u, v in edges:
            self.graph.add_edge(u, v, key=eid)
        if self.graph.number_of_nodes() > n_vertices:
            raise InputError(
                f"Edges use {self.graph.number_of_nodes()} vertices, header declares {n_vertices}.",
                "VERTEX_COUNT",
            )
        self._ends = [(u, v) for _, u, v in edges]

    def _independent(self, idx: Sequence[int]) -> bool:
        forest = UnionFind()
        for i in idx:
            u, v = self._ends[i]
            if forest[u] == forest[v]:
                return False
            forest.union(u, v)
        return True

    def _rank_idx(self, idx: Sequence[int]) -> int:
        forest = UnionFind()
        merged = 0
        for i in idx:
            u, v = self._ends[i]
            if forest[u] != forest[v]:
                forest.union(u, v)
                merged += 1
        return merged

    def _constraints(self) -> Tuple[np.ndarray, np.ndarray]:
        # Forest polytope: x(E[W]) <= |W| - 1 for every vertex subset W.
        vertices = list(self.graph.nodes)
        if len(vertices) > settings.ENUMERATION_CAP:
            raise CapabilityError(
                f"Graphic polytope check enumerates 2^{len(vertices)} vertex subsets.", "ENUMERATION_CAP"
            )
        position = {v: i for i, v in enumerate(vertices)}
        ends = np.array([[position[u], position[v]] for u, v in self._ends], dtype=int).reshape(-1, 2)
        rows, bounds = [], []
        for code in range(1, 1 << len(vertices)):
            inside = ((code >> ends) & 1).all(axis=1) if len(ends) else np.zeros(0, dtype=bool)
            if not inside.any():
                continue
            rows.append(inside.astype(float))
            bounds.append(bin(code).count("1") - 1)
        if not rows:
            return np.zeros((0, len(self.ground))), np.zeros(0)
        return np.array(rows), np.array(bounds, dtype=float)

    @property
    def edges(self) -> List[Tuple[ElementId, Hashable, Hashable]]:
        return [(eid, u, v) for eid, (u, v) in zip(self.ground.elements, self._ends)]

    def describe(self) -> str:
        edges = " ".join(f"{eid}={u}-{v}" for eid, u, v in self.edges)
        return f"graphic {self.n_vertices} {edges}"
