import numpy as np
import pytest

from app.models.main_schema import Family
from app.utils.submodular.matroid import GraphicMatroid, PartitionMatroid, UniformMatroid
from app.utils.submodular.setfn import CoverageFunction, Dataset, GroundSet

COVERAGE_TEXT = """\
# U = {u1,u2,u3}, V = {v1..v4}
coverage 3 4
v1: u1
v2: u1 u2
v3: u2
v4: u3
"""


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def coverage_dataset() -> Dataset:
    """Edges u1v1, u1v2, u2v2, u2v3, u3v4."""
    return Dataset(
        records=(
            frozenset({"u1"}),
            frozenset({"u1", "u2"}),
            frozenset({"u2"}),
            frozenset({"u3"}),
        ),
        schema_tag=Family.COVERAGE,
        universe=("u1", "u2", "u3"),
    )


@pytest.fixture
def coverage_fn(coverage_dataset) -> CoverageFunction:
    return CoverageFunction(coverage_dataset)


@pytest.fixture
def abc() -> GroundSet:
    return GroundSet(["a", "b", "c"])


@pytest.fixture
def uniform2(abc) -> UniformMatroid:
    return UniformMatroid(abc, 2)


@pytest.fixture
def partition_ab_c(abc) -> PartitionMatroid:
    return PartitionMatroid(abc, [(["a", "b"], 1), (["c"], 1)])


@pytest.fixture
def triangle() -> GraphicMatroid:
    return GraphicMatroid(3, [("e1", 0, 1), ("e2", 1, 2), ("e3", 0, 2)])


@pytest.fixture
def coverage_files(tmp_path):
    instance = tmp_path / "coverage.txt"
    instance.write_text(COVERAGE_TEXT)
    matroid = tmp_path / "uniform2.txt"
    matroid.write_text("uniform 2\n")
    return instance, matroid
