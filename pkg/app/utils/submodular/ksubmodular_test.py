import math

import numpy as np
import pytest

from app.core.errors import InputError
from app.models.main_schema import PrivacyParams
from app.utils.submodular.ksubmodular import (
    KAssignment,
    all_label_vectors,
    brute_force_ksub,
    build_k_function,
    check_ksub_monotone,
    dp_ksub_greedy,
    dp_ksub_greedy_sampled,
    join,
    meet,
    meet_join_check,
    random_kfacility_dataset,
    random_ktopic_dataset,
    sample_size,
    support_size_dataset,
)
from app.utils.submodular.matroid import PartitionMatroid, UniformMatroid
from app.utils.submodular.setfn import GroundSet, make_neighbor, measure_sensitivity

ELEMENTS = ["e1", "e2", "e3", "e4"]


@pytest.fixture
def support_fn():
    return build_k_function(support_size_dataset(ELEMENTS, 2))


@pytest.fixture
def ktopic_fn(rng):
    return build_k_function(random_ktopic_dataset(2, 4, 6, 0.4, rng))


def _pp(epsilon, sensitivity):
    return PrivacyParams(epsilon=epsilon, sensitivity=sensitivity)


def test_label_vectors_enumerate_every_assignment():
    labels = all_label_vectors(3, 2)
    assert labels.shape == (27, 3)
    assert len({tuple(row) for row in labels.tolist()}) == 27
    # row 5 = 12 in base 3, least significant digit first
    assert labels[5].tolist() == [2, 1, 0]


def test_meet_and_join():
    s = np.array([1, 2, 0, 1])
    t = np.array([1, 1, 2, 0])
    assert meet(s, t).tolist() == [1, 0, 0, 0]
    assert join(s, t).tolist() == [1, 0, 2, 1]


def test_support_size_is_k_submodular():
    fn = build_k_function(support_size_dataset(["a", "b", "c"], 2))
    assert meet_join_check(fn).passed
    assert check_ksub_monotone(fn).passed


def test_meet_join_check_finds_violation():
    fn = build_k_function(support_size_dataset(["a", "b", "c"], 2))
    # 1 only when the first two elements are both assigned
    fn._values = lambda labels: ((labels[:, 0] != 0) & (labels[:, 1] != 0)).astype(float)
    check = meet_join_check(fn)
    assert not check.passed
    assert check.violation.startswith("violated at")


@pytest.mark.parametrize(
    "make",
    [
        lambda rng: random_ktopic_dataset(2, 4, 6, 0.4, rng),
        lambda rng: random_kfacility_dataset(2, 4, 4, rng),
    ],
)
def test_random_families_are_monotone_k_submodular(make, rng):
    fn = build_k_function(make(rng))
    assert check_ksub_monotone(fn).passed
    assert meet_join_check(fn).passed
    assert measure_sensitivity(fn, 10, rng).within_bound


def test_marginal(support_fn):
    empty = KAssignment.empty(4, 2)
    assert support_fn.marginal_ksub(empty, "e1", 2) == pytest.approx(0.25)
    assigned = empty.assign(0, 1)
    with pytest.raises(InputError) as exc:
        support_fn.marginal_ksub(assigned, "e1", 2)
    assert exc.value.code == "ELEMENT_ASSIGNED"
    with pytest.raises(InputError):
        support_fn.marginal_ksub(empty, "e2", 3)


def test_label_validation(support_fn):
    with pytest.raises(InputError) as exc:
        support_fn.evaluate_batch(np.array([[0, 0, 3, 0]]))
    assert exc.value.code == "VALUE_RANGE"


def test_ktopic_counts_each_topic_separately(rng):
    ds = random_ktopic_dataset(2, 3, 1, 1.0, rng)
    fn = build_k_function(ds)
    # a single right vertex adjacent to every left vertex on both topics
    assert fn.evaluate(KAssignment(labels=np.array([1, 0, 0]), k=2)) == pytest.approx(0.5)
    assert fn.evaluate(KAssignment(labels=np.array([1, 2, 0]), k=2)) == pytest.approx(1.0)
    assert fn.sensitivity == pytest.approx(1.0)


def test_greedy_support_size_reaches_optimum(support_fn, rng):
    matroid = UniformMatroid(support_fn.ground, 2)
    result = dp_ksub_greedy(support_fn, matroid, _pp(1.0, support_fn.sensitivity), rng)
    assert result.assignment.support_mask.sum() == 2
    assert support_fn.evaluate(result.assignment) == pytest.approx(2 / 4)
    assert brute_force_ksub(support_fn, matroid).value == pytest.approx(2 / 4)


def test_greedy_transcript_budget(ktopic_fn, rng):
    matroid = UniformMatroid(ktopic_fn.ground, 3)
    result = dp_ksub_greedy(ktopic_fn, matroid, _pp(0.2, ktopic_fn.sensitivity), rng)
    assert len(result.transcript) == 3
    assert result.transcript.basic_budget() == pytest.approx((0.6, 0.0))
    assert result.transcript.steps[0].n_candidates == 4 * 2
    assert result.evaluations == (4 + 3 + 2) * 2


def test_argmax_greedy_is_half_approximate(ktopic_fn, rng):
    matroid = UniformMatroid(ktopic_fn.ground, 2)
    result = dp_ksub_greedy(ktopic_fn, matroid, _pp(math.inf, ktopic_fn.sensitivity), rng)
    optimum = brute_force_ksub(ktopic_fn, matroid)
    assert ktopic_fn.evaluate(result.assignment) >= 0.5 * optimum.value - 1e-12


def test_greedy_respects_partition(support_fn, rng):
    matroid = PartitionMatroid(support_fn.ground, [(["e1", "e2"], 1), (["e3", "e4"], 1)])
    result = dp_ksub_greedy(support_fn, matroid, _pp(1.0, support_fn.sensitivity), rng)
    assert matroid.is_base(result.assignment.support(support_fn.ground))


def test_shadow_ratios_within_epsilon(ktopic_fn, rng):
    matroid = UniformMatroid(ktopic_fn.ground, 2)
    shadow = ktopic_fn.with_dataset(make_neighbor(ktopic_fn.dataset, 0, rng))
    pp = _pp(0.5, ktopic_fn.sensitivity)
    result = dp_ksub_greedy(ktopic_fn, matroid, pp, rng, shadow=shadow)
    assert all(s.audit_ratio <= pp.epsilon + 1e-9 for s in result.transcript.steps)


def test_ground_mismatch(support_fn):
    matroid = UniformMatroid(GroundSet(["x", "y", "z", "w"]), 2)
    with pytest.raises(InputError) as exc:
        dp_ksub_greedy(support_fn, matroid, _pp(1.0, 0.25), np.random.default_rng(0))
    assert exc.value.code == "GROUND_MISMATCH"


def test_sample_size():
    assert sample_size(100, 10, 1, 0.5) == 30
    assert sample_size(4, 4, 4, 0.1) == 4
    with pytest.raises(InputError):
        sample_size(10, 2, 3, 0.5)


def test_sampled_greedy_completes_with_uniform_matroid(support_fn, rng):
    matroid = UniformMatroid(support_fn.ground, 2)
    result = dp_ksub_greedy_sampled(support_fn, matroid, _pp(1.0, support_fn.sensitivity), 0.1, rng)
    assert not result.failed
    assert len(result.sample_sizes) == 2
    assert result.assignment.support_mask.sum() == 2


@pytest.fixture
def one_addable(support_fn):
    # only e1 can ever be added
    return PartitionMatroid(support_fn.ground, [(["e1"], 1), (["e2", "e3", "e4"], 0)])


def test_sampled_greedy_can_fail(support_fn, one_addable):
    pp = _pp(1.0, support_fn.sensitivity)
    results = [
        dp_ksub_greedy_sampled(support_fn, one_addable, pp, 0.9, np.random.default_rng(seed)) for seed in range(30)
    ]
    failed = [r for r in results if r.failed]
    assert failed
    assert all(len(r.transcript) == 0 and r.sample_sizes == [1] for r in failed)
    assert any(not r.failed for r in results)


def test_sampled_greedy_retries_record_deviation(support_fn, one_addable):
    pp = _pp(1.0, support_fn.sensitivity)
    results = [
        dp_ksub_greedy_sampled(support_fn, one_addable, pp, 0.9, np.random.default_rng(seed), retries=3)
        for seed in range(30)
    ]
    retried = [r for r in results if r.retries_used and not r.failed]
    assert retried
    assert all(r.transcript.steps[-1].deviation.startswith("resampled R") for r in retried)


def test_retry_limit(support_fn, one_addable, rng):
    with pytest.raises(InputError):
        dp_ksub_greedy_sampled(support_fn, one_addable, _pp(1.0, 0.25), 0.5, rng, retries=4)


def test_brute_force_rank_zero(support_fn):
    optimum = brute_force_ksub(support_fn, UniformMatroid(support_fn.ground, 0))
    assert optimum.value == 0.0
    assert optimum.max_support == 0


def test_summary_lists_assigned_topics(support_fn, rng):
    matroid = UniformMatroid(support_fn.ground, 1)
    result = dp_ksub_greedy(support_fn, matroid, _pp(math.inf, support_fn.sensitivity), rng)
    summary = result.get_summary(support_fn.ground)
    assert summary["assignment"] == {"e1": 1}
    assert summary["failed"] is False


@pytest.mark.parametrize("seed", range(20))
def test_argmax_greedy_half_approximation_suite(seed):
    rng = np.random.default_rng(seed)
    k = 2 + seed % 2
    n_left = 5 + seed % 3
    fn = build_k_function(random_ktopic_dataset(k, n_left, 6, 0.4, rng))
    matroid = UniformMatroid(fn.ground, 3)
    result = dp_ksub_greedy(fn, matroid, _pp(math.inf, fn.sensitivity), rng)
    assert fn.evaluate(result.assignment) >= 0.5 * brute_force_ksub(fn, matroid).value - 1e-12


def test_finite_epsilon_mean_meets_selection_bound():
    rng = np.random.default_rng(7)
    fn = build_k_function(random_ktopic_dataset(2, 5, 6, 0.4, rng))
    matroid = UniformMatroid(fn.ground, 2)
    pp = _pp(10.0, fn.sensitivity)
    n = fn.n
    per_round = (2 * fn.sensitivity / pp.epsilon) * math.log(fn.k * n * n**2)
    values = [fn.evaluate(dp_ksub_greedy(fn, matroid, pp, rng).assignment) for _ in range(200)]
    optimum = brute_force_ksub(fn, matroid).value
    assert np.mean(values) >= 0.5 * optimum - matroid.rank * per_round


@pytest.fixture
def three_addable():
    # 40 elements, only e1..e3 can be assigned
    ground = GroundSet([f"e{i}" for i in range(1, 41)])
    blocks = [(["e1"], 1), (["e2"], 1), (["e3"], 1), ([f"e{i}" for i in range(4, 41)], 0)]
    return PartitionMatroid(ground, blocks)


def test_sampled_greedy_failure_rate_and_evaluations(three_addable):
    fn = build_k_function(support_size_dataset(three_addable.ground.elements, 2))
    pp = _pp(1.0, fn.sensitivity)
    gamma, runs = 0.5, 10_000
    rng = np.random.default_rng(11)
    failures = 0
    for _ in range(runs):
        result = dp_ksub_greedy_sampled(fn, three_addable, pp, gamma, rng)
        failures += result.failed
        assert result.evaluations <= fn.k * sum(result.sample_sizes)
    assert failures / runs <= gamma + 3 * math.sqrt(gamma / runs)
