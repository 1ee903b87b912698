from app.models.main_schema import Family
from app.utils.property_checks import run_property_suite, run_synthetic_suites, synthetic_datasets
from app.utils.submodular.ksubmodular import support_size_dataset


def test_coverage_suite(coverage_dataset, rng):
    suite = run_property_suite(coverage_dataset, 10, rng)
    assert suite.passed
    assert [c.name for c in suite.checks] == ["monotone", "submodular"]
    assert suite.sensitivity.declared == 0.25
    summary = suite.get_summary()
    assert summary["family"] == "coverage"
    assert summary["sensitivity"]["within_bound"]


def test_under_declared_sensitivity_fails(coverage_dataset, rng):
    suite = run_property_suite(coverage_dataset, 20, rng, sensitivity=1e-4)
    assert all(c.passed for c in suite.checks)
    assert not suite.passed


def test_support_size_has_no_records_to_perturb(rng):
    suite = run_property_suite(support_size_dataset(["a", "b", "c"], 2), 10, rng)
    assert suite.passed
    assert suite.sensitivity is None
    assert "sensitivity" not in suite.get_summary()


def test_synthetic_datasets_cover_every_family(rng):
    families = [d.schema_tag for d in synthetic_datasets(rng)]
    assert set(families) == set(Family)


def test_synthetic_suites_pass():
    suites = run_synthetic_suites(seed=1, trials=3)
    assert len(suites) == 6
    assert all(s.passed for s in suites)
