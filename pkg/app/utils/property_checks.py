import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from app.core.errors import CapabilityError
from app.models.main_schema import K_FAMILIES
from app.utils.submodular.ksubmodular import (
    build_k_function,
    check_ksub_monotone,
    meet_join_check,
    random_kfacility_dataset,
    random_ktopic_dataset,
    support_size_dataset,
)
from app.utils.submodular.setfn import (
    Dataset,
    PropertyCheck,
    SensitivityReport,
    build_set_function,
    check_monotone,
    check_submodular,
    measure_sensitivity,
    random_average_dataset,
    random_coverage_dataset,
    random_facility_dataset,
)

logger = logging.getLogger(__name__)


@dataclass
class PropertySuite:
    family: str
    n_elements: int
    checks: List[PropertyCheck] = field(default_factory=list)
    sensitivity: Optional[SensitivityReport] = None
    skipped: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        checks_ok = all(c.passed for c in self.checks)
        return checks_ok and (self.sensitivity is None or self.sensitivity.within_bound)

    def get_summary(self) -> Dict[str, Any]:
        summary: Dict[str, Any] = {
            "family": self.family,
            "n_elements": self.n_elements,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "checked": c.checked, "violation": c.violation}
                for c in self.checks
            ],
            "skipped": self.skipped,
        }
        if self.sensitivity is not None:
            summary["sensitivity"] = {
                "measured": self.sensitivity.measured,
                "declared": self.sensitivity.declared,
                "trials": self.sensitivity.trials,
                "generator": self.sensitivity.generator,
                "within_bound": self.sensitivity.within_bound,
            }
        return summary


def run_property_suite(
    dataset: Dataset, trials: int, rng: np.random.Generator, sensitivity: Optional[float] = None
) -> PropertySuite:
    """Exhaustive monotonicity / (k-)submodularity checks plus a sampled sensitivity measurement."""
    if dataset.schema_tag in K_FAMILIES:
        fn = build_k_function(dataset, sensitivity)
        checkers = [check_ksub_monotone, meet_join_check]
    else:
        fn = build_set_function(dataset, sensitivity)
        checkers = [check_monotone, check_submodular]
    suite = PropertySuite(family=fn.family.value, n_elements=fn.n)
    for checker in checkers:
        try:
            suite.checks.append(checker(fn))
        except CapabilityError as exc:
            suite.skipped.append(f"{checker.__name__}: {exc.message}")
    if len(dataset) and trials > 0:
        try:
            suite.sensitivity = measure_sensitivity(fn, trials, rng)
        except CapabilityError as exc:
            suite.skipped.append(f"measure_sensitivity: {exc.message}")
    logger.info("[Property Suite] %s n=%d -> %s", suite.family, suite.n_elements, "PASS" if suite.passed else "FAIL")
    return suite


def synthetic_datasets(rng: np.random.Generator, n: int = 8, n_k: int = 4, k: int = 2) -> List[Dataset]:
    """One random instance per shipped family."""
    return [
        random_coverage_dataset(n, 10, 0.3, rng),
        random_facility_dataset(6, n, rng),
        random_average_dataset(6, n, rng),
        random_ktopic_dataset(k, n_k, 6, 0.4, rng),
        random_kfacility_dataset(k, 4, n_k, rng),
        support_size_dataset([f"e{i + 1}" for i in range(n_k)], k),
    ]


def run_synthetic_suites(seed: int, trials: int = 5) -> List[PropertySuite]:
    rng = np.random.default_rng(seed)
    return [run_property_suite(d, trials, rng) for d in synthetic_datasets(rng)]
