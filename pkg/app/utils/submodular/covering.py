import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional

import numpy as np
from scipy.spatial import cKDTree

from app.core import settings
from app.core.errors import CapabilityError, InputError
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.setfn import GroundSet

logger = logging.getLogger(__name__)


@dataclass
class Covering:
    """A finite ρ-covering of P(M); one point per row, columns in ground-set order."""

    points: np.ndarray
    rho: float
    ground: GroundSet
    matroid_spec: str
    construction: str = "explicit"
    step: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.points.shape[0]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def nearest_distance(self, queries: np.ndarray) -> np.ndarray:
        if len(self) == 0:
            raise InputError("Covering has no points.", "EMPTY_COVERING")
        if self.points.shape[1] == 0:
            return np.zeros(np.atleast_2d(queries).shape[0])
        distances, _ = self.tree.query(np.atleast_2d(queries))
        return np.asarray(distances, dtype=float)

    def matches(self, matroid: Matroid) -> bool:
        return self.ground == matroid.ground and self.matroid_spec == matroid.describe()

    def get_summary(self) -> Dict[str, Any]:
        return {
            "size": len(self),
            "rho": self.rho,
            "construction": self.construction,
            "step": self.step,
            "matroid": self.matroid_spec,
            "elements": [str(e) for e in self.ground.elements],
            "max_norm": float(np.linalg.norm(self.points, axis=1).max()) if len(self) else 0.0,
        }


def grid_levels(rho: float, n: int) -> np.ndarray:
    """Coordinate levels {jh : jh < 1} ∪ {1} with h = ρ/√n."""
    if rho <= 0:
        raise InputError("rho must be > 0.", "VALUE_RANGE")
    h = rho / math.sqrt(max(1, n))
    count = math.ceil(1.0 / h - 1e-9)
    levels = [round(j * h, 12) for j in range(count) if j * h < 1.0 - 1e-9]
    return np.array(levels + [1.0])


def required_grid_size(matroid: Matroid, rho: float) -> int:
    return len(grid_levels(rho, len(matroid.ground))) ** len(matroid.ground)


def build_grid_covering(matroid: Matroid, rho: float) -> Covering:
    n = len(matroid.ground)
    levels = grid_levels(rho, n)
    required = len(levels) ** n
    if required > settings.COVERING_BUDGET:
        raise CapabilityError(
            f"Grid covering at rho={rho:g} needs {required} lattice points; budget is {settings.COVERING_BUDGET}.",
            "COVERING_BUDGET_EXCEEDED",
        )
    logger.info("[Covering] building grid: n=%d levels=%d lattice=%d", n, len(levels), required)

    radix = len(levels) ** np.arange(n, dtype=np.int64)
    kept = []
    chunk = settings.BATCH_ROWS * 16
    for start in range(0, required, chunk):
        codes = np.arange(start, min(required, start + chunk), dtype=np.int64)
        digits = (codes[:, None] // radix[None, :]) % len(levels)
        points = levels[digits]
        kept.append(points[matroid.polytope_contains_batch(points)])
    points = np.vstack(kept) if kept else np.zeros((1, 0))

    h = rho / math.sqrt(max(1, n))
    covering = Covering(
        points=points,
        rho=rho,
        ground=matroid.ground,
        matroid_spec=matroid.describe(),
        construction=f"grid(h={h:.6g})",
        step=h,
    )
    logger.info("[Covering] kept %d of %d lattice points", len(covering), required)
    return covering


def covering_from_points(matroid: Matroid, points: np.ndarray, rho: float, construction: str = "explicit") -> Covering:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise InputError("Covering has no points.", "EMPTY_COVERING")
    if rho <= 0:
        raise InputError("rho must be > 0.", "VALUE_RANGE")
    inside = matroid.polytope_contains_batch(points)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise InputError(f"Covering point {bad} lies outside P(M).", "POINT_OUTSIDE_POLYTOPE")
    return Covering(
        points=points, rho=rho, ground=matroid.ground, matroid_spec=matroid.describe(), construction=construction
    )


@dataclass
class CoveringCheck:
    max_distance: float
    rho: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_distance <= self.rho + 1e-9

    def get_summary(self) -> Dict[str, Any]:
        return {"max_distance": self.max_distance, "rho": self.rho, "samples": self.samples, "passed": self.passed}


def sample_polytope_points(matroid: Matroid, samples: int, rng: np.random.Generator) -> np.ndarray:
    """
    Random points of P(M): a third are base vertices, a third are Dirichlet
    mixtures of bases scaled down coordinate-wise, the rest come from rejection
    sampling of the unit cube (topped up with mixtures when rejection stalls).
    """
    n = len(matroid.ground)
    pool_size = min(samples, 256)
    pool = np.array(
        [matroid.ground.mask_of(matroid.random_base(rng)) for _ in range(max(1, pool_size))], dtype=float
    ).reshape(max(1, pool_size), n)

    n_vertices = samples // 3
    n_cube = samples // 3
    n_mixtures = samples - n_vertices - n_cube

    vertices = pool[rng.integers(0, pool.shape[0], n_vertices)]

    def mixtures(count: int) -> np.ndarray:
        parts = min(pool.shape[0], n + 1)
        picks = rng.integers(0, pool.shape[0], (count, parts))
        weights = rng.dirichlet(np.ones(parts), count)
        combo = np.einsum("sp,spn->sn", weights, pool[picks])
        scale = np.where(rng.random((count, 1)) < 0.5, 1.0, rng.random((count, n)))
        return combo * scale

    cube = []
    found = 0
    for _ in range(64):
        if found >= n_cube:
            break
        candidates = rng.random((max(n_cube, 64), n))
        inside = candidates[matroid.polytope_contains_batch(candidates)]
        cube.append(inside[: n_cube - found])
        found += cube[-1].shape[0]
    cube_points = np.vstack(cube) if cube else np.zeros((0, n))
    topped = mixtures(n_cube - cube_points.shape[0]) if cube_points.shape[0] < n_cube else np.zeros((0, n))

    return np.vstack([vertices, mixtures(n_mixtures), cube_points, topped])


def verify_covering(
    covering: Covering, matroid: Matroid, samples: int, rng: np.random.Generator
) -> CoveringCheck:
    if len(covering) == 0:
        raise InputError("Covering has no points.", "EMPTY_COVERING")
    if samples < 1:
        raise InputError("samples must be >= 1.", "VALUE_RANGE")
    if not covering.matches(matroid):
        raise InputError("Covering was built for a different matroid.", "COVERING_MISMATCH")
    queries = sample_polytope_points(matroid, samples, rng)
    distances = covering.nearest_distance(queries)
    check = CoveringCheck(max_distance=float(distances.max(initial=0.0)), rho=covering.rho, samples=samples)
    logger.info("[Covering] verify: max distance %.6g vs rho %.6g -> %s",
                check.max_distance, check.rho, "PASS" if check.passed else "FAIL")
    return check
