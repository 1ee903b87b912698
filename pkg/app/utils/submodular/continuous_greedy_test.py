import math

import numpy as np
import pytest

from app.core.errors import InputError
from app.models.main_schema import GradientKind, GradientMode, GreedyConfig, LayerConfig, LayerSource, PrivacyParams
from app.utils.submodular.continuous_greedy import (
    assign_layers,
    build_layers,
    choose_layer,
    dp_continuous_greedy,
    dp_layered_greedy,
    estimation_error_check,
    layer_count_ratio_bound,
    layer_distribution,
    layered_selection_bound,
    per_step_epsilon,
    preset_parameters,
)
from app.utils.submodular.covering import build_grid_covering
from app.utils.submodular.matroid import UniformMatroid
from app.utils.submodular.multilinear import exact_extension, exact_gradient
from app.utils.submodular.setfn import build_set_function, make_neighbor, modular_dataset


@pytest.fixture
def setting(coverage_fn):
    matroid = UniformMatroid(coverage_fn.ground, 2)
    covering = build_grid_covering(matroid, 0.5)
    return coverage_fn, matroid, covering


def _config(epsilon, seed=7, **kwargs):
    return GreedyConfig(rho=0.5, privacy=PrivacyParams(epsilon=epsilon, sensitivity=0.25), seed=seed, **kwargs)


def test_argmax_run_stays_in_polytope(setting):
    fn, matroid, covering = setting
    result = dp_continuous_greedy(fn, matroid, covering, _config(math.inf))
    assert len(result.directions) == matroid.rank
    assert len(result.transcript) == matroid.rank
    assert matroid.polytope_contains(result.x_final)
    assert len(result.trajectory) == matroid.rank + 1


def test_argmax_run_reaches_a_good_point(setting):
    fn, matroid, covering = setting
    result = dp_continuous_greedy(fn, matroid, covering, _config(math.inf, T=4))
    assert exact_extension(fn, result.x_final) >= 0.5


def test_private_run_is_reproducible(setting):
    fn, matroid, covering = setting
    first = dp_continuous_greedy(fn, matroid, covering, _config(1.0, seed=3))
    second = dp_continuous_greedy(fn, matroid, covering, _config(1.0, seed=3))
    assert first.directions == second.directions
    assert matroid.polytope_contains(first.x_final)


def test_per_step_cost_scales_with_rank(setting):
    fn, matroid, covering = setting
    result = dp_continuous_greedy(fn, matroid, covering, _config(0.5))
    assert all(step.eps_step == pytest.approx(2.0) for step in result.transcript.steps)
    assert per_step_epsilon(PrivacyParams(epsilon=0.5, sensitivity=1.0), 0) == 1.0


def test_mc_gradient_mode(setting):
    fn, matroid, covering = setting
    cfg = _config(1.0, gradient=GradientMode(kind=GradientKind.MC, samples=20))
    result = dp_continuous_greedy(fn, matroid, covering, cfg)
    assert result.gradient_mode == "mc(20)"
    assert result.evaluations == matroid.rank * 20 * (fn.n + 1)


def test_shadow_records_audit_ratios(setting, rng):
    fn, matroid, covering = setting
    shadow = fn.with_dataset(make_neighbor(fn.dataset, 0, rng))
    result = dp_continuous_greedy(fn, matroid, covering, _config(1.0, audit=True), shadow=shadow)
    ratios = [s.audit_ratio for s in result.transcript.steps]
    assert all(r is not None for r in ratios)
    assert max(ratios) <= per_step_epsilon(PrivacyParams(epsilon=1.0, sensitivity=0.25), matroid.rank) + 1e-9
    assert result.transcript.steps[0].scores is not None


def test_covering_for_other_matroid_rejected(setting):
    fn, matroid, _ = setting
    other = build_grid_covering(UniformMatroid(fn.ground, 1), 0.5)
    with pytest.raises(InputError) as exc:
        dp_continuous_greedy(fn, matroid, other, _config(1.0))
    assert exc.value.code == "COVERING_MISMATCH"


def test_layers_follow_quality_scale():
    assignment = assign_layers(np.array([0.0, math.log(2), math.log(4)]), 1.0)
    assert assignment.k_layers == 3
    assert assignment.layers.tolist() == [1, 2, 3]
    assert assignment.counts().tolist() == [1, 1, 1]


def test_layer_distribution_skips_empty_layers():
    probs = layer_distribution(np.array([0.5, 0.0, 0.5]), 1.0, 1.0)
    assert probs[1] == 0.0
    assert probs.sum() == pytest.approx(1.0)
    # weights 0.5 * 2^0 and 0.5 * 2^2
    assert probs[2] / probs[0] == pytest.approx(4.0)


def test_layer_choice_argmax_takes_top_nonempty(rng):
    pp = PrivacyParams(epsilon=math.inf, sensitivity=1.0)
    assert choose_layer(np.array([0.3, 0.7, 0.0]), 1.0, pp, rng) == 1
    with pytest.raises(InputError):
        choose_layer(np.zeros(3), 1.0, pp, rng)


def test_estimation_check_with_loose_lambda(setting, rng):
    _, _, covering = setting
    lcfg = LayerConfig(mu=1.0, lam=1.0, theta=0.1)
    check = estimation_error_check(covering, np.array([0.5, 0.25, 0.25]), lcfg, 50, rng)
    assert check.failure_rate == 0.0
    assert check.passed


def test_estimation_check_within_theta(setting, rng):
    _, _, covering = setting
    lcfg = LayerConfig(mu=1.0, lam=0.2, theta=0.1)
    check = estimation_error_check(covering, np.array([0.5, 0.25, 0.25]), lcfg, 300, rng)
    assert check.passed


@pytest.mark.parametrize("source", [LayerSource.SAMPLED, LayerSource.FULL])
def test_layered_run(setting, source):
    fn, matroid, covering = setting
    lcfg = LayerConfig(mu=1.0, lam=0.5, theta=0.1)
    result = dp_layered_greedy(fn, matroid, covering, _config(1.0, layer_source=source), lcfg)
    assert len(result.directions) == matroid.rank
    assert len(result.sample_sizes) == matroid.rank
    assert all(k >= 1 for k in result.layer_counts)
    assert matroid.polytope_contains(result.x_final)
    assert result.quality_evaluations >= sum(result.sample_sizes)


def test_layered_argmax_run(setting):
    fn, matroid, covering = setting
    lcfg = LayerConfig(mu=1.0, lam=0.5, theta=0.1)
    result = dp_layered_greedy(fn, matroid, covering, _config(math.inf), lcfg)
    assert matroid.polytope_contains(result.x_final)


def test_layer_bounds():
    assert layer_count_ratio_bound(4, 0.25, 2, 1.0) == pytest.approx(1.0 + (1.0 / math.log(2) + 2.0) / 4)
    lcfg = LayerConfig(mu=1.0, lam=0.1, theta=0.05)
    pp = PrivacyParams(epsilon=1.0, sensitivity=0.25)
    assert layered_selection_bound(10, 3, lcfg, pp, 0.1) > 0
    assert layered_selection_bound(10, 3, lcfg, PrivacyParams(epsilon=math.inf, sensitivity=0.25), 0.1) == 0.0


def test_sample_count_formula():
    lcfg = LayerConfig(mu=1.0, lam=0.5, theta=0.1)
    assert lcfg.sample_count(3) == math.ceil(math.log(30) / 0.25)


def test_recommended_parameters():
    params = preset_parameters(4, 1.0)
    assert params["rho"] == pytest.approx(0.5)
    assert params["mu"] == pytest.approx(math.e)
    assert params["lam"] == pytest.approx(0.5)
    assert params["theta"] == pytest.approx(1 / 16)
    assert params["grid_size_log10"] == pytest.approx(4 * math.log10(params["grid_levels"]))


def test_exact_trajectory_is_nondecreasing(setting):
    fn, matroid, covering = setting
    result = dp_continuous_greedy(fn, matroid, covering, _config(math.inf, T=4))
    values = [exact_extension(fn, x) for x in result.trajectory]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_single_round_lands_on_the_chosen_point(setting):
    fn, matroid, covering = setting
    result = dp_continuous_greedy(fn, matroid, covering, _config(1.0, T=1))
    assert result.alpha == 1.0
    assert result.x_final == pytest.approx(covering.points[result.directions[0]])


def test_linear_objective_moves_toward_heaviest_element():
    fn = build_set_function(modular_dataset({"a": 0.2, "b": 0.5, "c": 0.3}))
    matroid = UniformMatroid(fn.ground, 1)
    covering = build_grid_covering(matroid, 0.5)
    result = dp_continuous_greedy(fn, matroid, covering, _config(math.inf))
    assert result.x_final == pytest.approx([0.0, 1.0, 0.0])


def test_layer_count_ratio_on_neighbouring_coverage(setting, rng):
    fn, matroid, covering = setting
    mu = 0.2
    for index in range(len(fn.dataset)):
        shadow = fn.with_dataset(make_neighbor(fn.dataset, index, rng))
        k = build_layers(covering, exact_gradient(fn, np.zeros(fn.n)), mu).k_layers
        k_prime = build_layers(covering, exact_gradient(shadow, np.zeros(fn.n)), mu).k_layers
        assert k_prime / k <= layer_count_ratio_bound(k, fn.sensitivity, matroid.rank, mu) + 1e-12
