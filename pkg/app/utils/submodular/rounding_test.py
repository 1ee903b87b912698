from itertools import combinations

import numpy as np
import pytest

from app.core.errors import InputError
from app.utils.submodular.covering import sample_polytope_points
from app.utils.submodular.matroid import GraphicMatroid, PartitionMatroid, UniformMatroid
from app.utils.submodular.rounding import decompose, rounding_quality, swap_round
from app.utils.submodular.setfn import GroundSet, build_set_function, modular_dataset, random_coverage_dataset


@pytest.fixture
def rank_one():
    return UniformMatroid(GroundSet(["a", "b"]), 1)


def test_decompose_two_halves(rank_one):
    combination = decompose(rank_one, np.array([0.5, 0.5]))
    assert len(combination.parts) == 2
    assert [w for w, _ in combination.parts] == pytest.approx([0.5, 0.5])
    assert sorted(len(members) for _, members in combination.parts) == [1, 1]
    assert combination.residual_norm() <= 1e-9


def test_decompose_origin_is_empty(rank_one):
    combination = decompose(rank_one, np.zeros(2))
    assert combination.parts == []
    assert combination.total_weight == 0.0


def test_decompose_rejects_outside_point(rank_one):
    with pytest.raises(InputError) as exc:
        decompose(rank_one, np.array([0.8, 0.8]))
    assert exc.value.code == "POINT_OUTSIDE_POLYTOPE"


def test_decompose_interior_point(uniform2):
    x = np.array([2 / 3, 2 / 3, 2 / 3])
    combination = decompose(uniform2, x)
    assert combination.total_weight == pytest.approx(1.0)
    assert combination.reconstruct() == pytest.approx(x, abs=1e-8)
    for _, members in combination.parts:
        assert uniform2.is_independent_idx(members)


def test_decompose_graphic(triangle):
    x = np.array([0.5, 0.7, 0.3])
    combination = decompose(triangle, x)
    assert combination.reconstruct() == pytest.approx(x, abs=1e-8)
    assert combination.total_weight <= 1.0 + 1e-9


def test_empty_combination_rounds_to_greedy_base(rank_one, rng):
    result = swap_round(rank_one, decompose(rank_one, np.zeros(2)), rng)
    assert result.base == frozenset({"a"})
    assert result.deficit == pytest.approx(1.0)
    assert result.notes


def test_swap_round_returns_base(triangle, rng):
    combination = decompose(triangle, np.array([0.5, 0.5, 0.5]))
    for _ in range(20):
        assert triangle.is_base(swap_round(triangle, combination, rng).base)


def test_swap_round_preserves_marginals(uniform2, rng):
    combination = decompose(uniform2, np.array([2 / 3, 2 / 3, 2 / 3]))
    rounds = 2000
    counts = np.zeros(3)
    for _ in range(rounds):
        counts += uniform2.ground.mask_of(swap_round(uniform2, combination, rng).base)
    assert counts / rounds == pytest.approx([2 / 3] * 3, abs=0.05)


def test_rounding_quality_keeps_extension_value(coverage_fn, rng):
    matroid = UniformMatroid(coverage_fn.ground, 2)
    quality = rounding_quality(coverage_fn, matroid, np.array([0.5, 0.5, 0.5]), 200, rng)
    assert quality.passed
    assert quality.rounds == 200


def test_indicator_decomposes_to_single_part(uniform2):
    combination = decompose(uniform2, np.array([1.0, 0.0, 1.0]))
    assert combination.parts == [(pytest.approx(1.0), frozenset({0, 2}))]


def test_rank_one_halves_round_evenly(rank_one, rng):
    combination = decompose(rank_one, np.array([0.5, 0.5]))
    picks = [swap_round(rank_one, combination, rng).base for _ in range(4000)]
    share = sum(1 for b in picks if b == frozenset({"a"})) / len(picks)
    assert share == pytest.approx(0.5, abs=0.04)


def test_swap_round_never_evaluates_the_objective(coverage_fn, rng):
    matroid = UniformMatroid(coverage_fn.ground, 2)
    combination = decompose(matroid, np.array([0.5, 0.5, 0.5]))
    swap_round(matroid, combination, rng)
    assert coverage_fn.evaluations == 0


def test_modular_rounding_is_unbiased(rng):
    fn = build_set_function(modular_dataset({"a": 0.2, "b": 0.3, "c": 0.4}))
    matroid = UniformMatroid(fn.ground, 2)
    # parts of (2/3, 2/3, 2/3) are already bases, so no padding mass is added
    quality = rounding_quality(fn, matroid, np.full(3, 2 / 3), 2000, rng)
    assert quality.exact == pytest.approx(0.6)
    assert abs(quality.mean - quality.exact) <= 4 * quality.stderr


def _complete_graph(n_vertices):
    return GraphicMatroid(n_vertices, [(f"e{u}{v}", u, v) for u, v in combinations(range(n_vertices), 2)])


def _partition_2_1_2():
    ground = GroundSet([f"p{i}" for i in range(1, 9)])
    return PartitionMatroid(ground, [(["p1", "p2", "p3"], 2), (["p4", "p5"], 1), (["p6", "p7", "p8"], 2)])


MATROIDS = {
    "K4": lambda: _complete_graph(4),
    "K5": lambda: _complete_graph(5),
    "partition": _partition_2_1_2,
    "uniform": lambda: UniformMatroid(GroundSet([f"u{i}" for i in range(1, 8)]), 3),
}


@pytest.mark.parametrize("kind", sorted(MATROIDS))
def test_decompose_random_polytope_points(kind):
    matroid = MATROIDS[kind]()
    rng = np.random.default_rng(0)
    for x in sample_polytope_points(matroid, 100, rng):
        combination = decompose(matroid, x)
        assert combination.residual_norm() <= 1e-9
        assert combination.total_weight <= 1.0 + 1e-9
        for w, members in combination.parts:
            assert w > 0
            assert matroid.is_independent_idx(members)
        assert matroid.is_base(swap_round(matroid, combination, rng).base)


def test_decompose_k5_point_close_to_the_rank_face():
    k5 = _complete_graph(5)
    x = np.array([0.4042, 0.539, 0.2647, 0.1782, 0.7358, 0.2541, 0.5014, 0.2939, 0.3918, 0.4369])
    assert k5.polytope_contains(x)
    combination = decompose(k5, x)
    assert combination.reconstruct() == pytest.approx(x, abs=1e-9)
    assert all(k5.is_independent_idx(members) for _, members in combination.parts)


def test_decompose_follows_tight_sets_on_k4():
    # the triangle {e01, e02, e12} is tight, so every part must hold two of its edges
    k4 = _complete_graph(4)
    x = np.array([2 / 3, 2 / 3, 0.2, 2 / 3, 0.3, 0.1])
    combination = decompose(k4, x)
    assert combination.reconstruct() == pytest.approx(x, abs=1e-9)
    for _, members in combination.parts:
        assert len(members & {0, 1, 3}) == 2


@pytest.mark.parametrize("seed", range(5))
def test_swap_rounding_keeps_extension_value_on_random_coverage(seed):
    rng = np.random.default_rng(seed)
    fn = build_set_function(random_coverage_dataset(5, 8, 0.3, rng))
    matroid = UniformMatroid(fn.ground, 2)
    quality = rounding_quality(fn, matroid, np.full(5, 0.4), 10_000, rng)
    assert quality.passed
