import numpy as np
import pytest

from app.core.errors import CapabilityError, InputError
from app.models.main_schema import Algorithm, ExperimentConfig
from app.storage.result_writer import read_json, read_transcript
from app.utils.experiment_runner import (
    best_covering_value,
    brute_force_submodular,
    derive_seeds,
    nonprivate_greedy,
    prepare_context,
    run_experiment,
)
from app.utils.submodular.covering import build_grid_covering
from app.utils.submodular.ksubmodular import support_size_dataset
from app.utils.submodular.matroid import UniformMatroid
from app.utils.submodular.setfn import GroundSet


@pytest.fixture
def coverage_matroid(coverage_dataset):
    return UniformMatroid(GroundSet(coverage_dataset.universe), 2)


@pytest.fixture
def support_setting():
    dataset = support_size_dataset(["e1", "e2", "e3", "e4"], 2)
    return dataset, UniformMatroid(GroundSet(dataset.universe), 2)


def _config(algorithm, **kwargs):
    base = {"algorithm": algorithm, "epsilon": 1.0, "sensitivity": 0.25, "seed": 3}
    if algorithm in (Algorithm.CONT_GREEDY, Algorithm.LAYERED):
        base.update(rho=0.5, T=2)
    base.update(kwargs)
    return ExperimentConfig(**base)


def test_brute_force_coverage(coverage_fn, coverage_matroid):
    optimum = brute_force_submodular(coverage_fn, coverage_matroid)
    # every pair covers three of the four right vertices
    assert optimum.value == pytest.approx(0.75)
    assert len(optimum.best) == 2
    assert optimum.checked == 7


def test_nonprivate_greedy_breaks_ties_by_index(coverage_fn, coverage_matroid):
    chosen, value = nonprivate_greedy(coverage_fn, coverage_matroid)
    assert chosen == frozenset({"u1", "u2"})
    assert value == pytest.approx(0.75)


def test_baselines_reject_foreign_matroid(coverage_fn, uniform2):
    with pytest.raises(InputError) as exc:
        nonprivate_greedy(coverage_fn, uniform2)
    assert exc.value.code == "GROUND_MISMATCH"


def test_best_covering_value_reaches_integral_optimum(coverage_fn, coverage_matroid):
    covering = build_grid_covering(coverage_matroid, 0.5)
    index, value = best_covering_value(coverage_fn, covering)
    assert value == pytest.approx(0.75)
    assert covering.points[index].sum() == pytest.approx(2.0)


def test_derived_seeds_are_stable_and_distinct():
    seeds = derive_seeds(11, 4)
    assert seeds == derive_seeds(11, 4)
    assert len(set(seeds)) == 4
    assert derive_seeds(12, 4) != seeds


def test_cont_greedy_report(coverage_dataset, coverage_matroid):
    report = run_experiment(_config(Algorithm.CONT_GREEDY, repeat=2), coverage_dataset, coverage_matroid)
    assert len(report.runs) == 2
    for run in report.runs:
        assert len(run.selected) == 2
        assert run.value == pytest.approx(0.75)
        assert 0.0 <= run.extension_value <= 0.75 + 1e-9
        assert len(run.directions) == 2
        assert run.rounding["residual"] <= 1e-9
        assert isinstance(run.rounding["parts"], int) and isinstance(run.rounding["merges"], int)
    assert report.opt == pytest.approx(0.75)
    assert report.approximation_ratio == pytest.approx(1.0)
    assert report.privacy.steps == 2
    assert report.privacy.per_step_epsilon == pytest.approx(4.0)
    assert report.privacy.basic.epsilon == pytest.approx(8.0)
    assert report.gradient_mode == "exact"
    assert {"covering_lipschitz", "selection_per_round"} <= set(report.error_terms)
    assert report.params["covering_size"] > 0


def test_mc_gradient_label(coverage_dataset, coverage_matroid):
    report = run_experiment(
        _config(Algorithm.CONT_GREEDY, gradient="mc", samples=40), coverage_dataset, coverage_matroid
    )
    assert report.gradient_mode == "mc(40)"


def test_layered_report(coverage_dataset, coverage_matroid):
    report = run_experiment(_config(Algorithm.LAYERED, mu=0.5), coverage_dataset, coverage_matroid)
    assert report.runs[0].value == pytest.approx(0.75)
    assert report.privacy.steps == 2
    assert "layered_selection_per_round" in report.error_terms


def test_runs_are_reproducible(coverage_dataset, coverage_matroid):
    cfg = _config(Algorithm.CONT_GREEDY, epsilon=0.5, repeat=2)
    first = run_experiment(cfg, coverage_dataset, coverage_matroid)
    second = run_experiment(cfg, coverage_dataset, coverage_matroid)
    assert [r.x_final for r in first.runs] == [r.x_final for r in second.runs]
    assert [r.selected for r in first.runs] == [r.selected for r in second.runs]


def test_greedy_counts_evaluations(coverage_dataset, coverage_matroid):
    report = run_experiment(_config(Algorithm.GREEDY_NONPRIVATE), coverage_dataset, coverage_matroid)
    run = report.runs[0]
    assert run.selected == ["u1", "u2"]
    # F(∅), three singletons, two pairs
    assert run.evaluations == 6
    assert report.privacy is None
    assert report.error_terms == {}


def test_eval_budget_stops_a_run(coverage_dataset, coverage_matroid):
    with pytest.raises(CapabilityError) as exc:
        run_experiment(_config(Algorithm.GREEDY_NONPRIVATE, eval_budget=2), coverage_dataset, coverage_matroid)
    assert exc.value.code == "EVAL_BUDGET_EXCEEDED"


def test_ksub_report(support_setting):
    dataset, matroid = support_setting
    report = run_experiment(_config(Algorithm.KSUB, sensitivity=None, repeat=3), dataset, matroid)
    assert [run.value for run in report.runs] == pytest.approx([0.5, 0.5, 0.5])
    assert all(len(run.selected) == 2 for run in report.runs)
    assert report.opt == pytest.approx(0.5)
    assert report.privacy.steps == 2
    assert report.privacy.per_step_epsilon == pytest.approx(1.0)
    assert "selection_total" in report.error_terms
    assert report.gradient_mode is None


def test_brute_force_ksub_and_skipped_opt(support_setting):
    dataset, matroid = support_setting
    report = run_experiment(_config(Algorithm.BRUTE_FORCE, sensitivity=None, with_opt=False), dataset, matroid)
    assert report.runs[0].value == pytest.approx(0.5)
    assert report.opt is None
    assert report.approximation_ratio is None


def test_report_files(coverage_files, tmp_path):
    instance, matroid = coverage_files
    cfg = _config(
        Algorithm.CONT_GREEDY,
        instance=str(instance),
        matroid=str(matroid),
        out=str(tmp_path / "out" / "report.json"),
        csv_out=str(tmp_path / "out" / "runs.csv"),
        transcript_out=str(tmp_path / "out" / "steps.jsonl"),
    )
    report = run_experiment(cfg)
    saved = read_json(cfg.out)
    assert saved["algorithm"] == "cont-greedy"
    assert saved["mean"] == pytest.approx(report.mean)
    assert "out" not in saved["params"]
    assert (tmp_path / "out" / "runs.csv").read_text().startswith("seed,value")
    assert len(read_transcript(cfg.transcript_out)) == 2


@pytest.mark.parametrize(
    "algorithm, use_support, code",
    [
        (Algorithm.KSUB, False, "SCHEMA_MISMATCH"),
        (Algorithm.CONT_GREEDY, True, "SCHEMA_MISMATCH"),
    ],
)
def test_family_and_algorithm_must_agree(
    algorithm, use_support, code, coverage_dataset, coverage_matroid, support_setting
):
    dataset, matroid = support_setting if use_support else (coverage_dataset, coverage_matroid)
    with pytest.raises(InputError) as exc:
        prepare_context(_config(algorithm), dataset, matroid)
    assert exc.value.code == code


def test_k_must_match_instance(support_setting):
    dataset, matroid = support_setting
    with pytest.raises(InputError) as exc:
        prepare_context(_config(Algorithm.KSUB, k=3), dataset, matroid)
    assert exc.value.code == "K_MISMATCH"


def test_missing_inputs(coverage_dataset):
    with pytest.raises(InputError) as exc:
        prepare_context(_config(Algorithm.GREEDY_NONPRIVATE))
    assert exc.value.code == "MISSING_INSTANCE"
    with pytest.raises(InputError) as exc:
        prepare_context(_config(Algorithm.GREEDY_NONPRIVATE), coverage_dataset)
    assert exc.value.code == "MISSING_MATROID"


def test_matroid_over_other_elements(coverage_dataset, uniform2):
    with pytest.raises(InputError) as exc:
        prepare_context(_config(Algorithm.BRUTE_FORCE), coverage_dataset, uniform2)
    assert exc.value.code == "GROUND_MISMATCH"


def test_continuous_context_builds_covering(coverage_dataset, coverage_matroid):
    ctx = prepare_context(_config(Algorithm.CONT_GREEDY), coverage_dataset, coverage_matroid)
    assert ctx.covering is not None
    assert np.all(ctx.covering.points >= 0.0)
