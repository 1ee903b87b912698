import math
from enum import Enum
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core import settings


class Family(str, Enum):
    COVERAGE = "coverage"
    FACILITY = "facility-location"
    AVERAGE = "cpp-average"
    KTOPICS = "k-topic-coverage"
    KFACILITY = "k-facility-location"
    SUPPORT = "support-size"


K_FAMILIES = {Family.KTOPICS, Family.KFACILITY, Family.SUPPORT}


class MatroidKind(str, Enum):
    UNIFORM = "uniform"
    PARTITION = "partition"
    GRAPHIC = "graphic"


class Algorithm(str, Enum):
    CONT_GREEDY = "cont-greedy"
    LAYERED = "layered"
    KSUB = "ksub"
    KSUB_SAMPLED = "ksub-sampled"
    GREEDY_NONPRIVATE = "greedy-nonprivate"
    BRUTE_FORCE = "brute-force"


class GradientKind(str, Enum):
    EXACT = "exact"
    MC = "mc"


class LayerSource(str, Enum):
    SAMPLED = "sampled"
    FULL = "full"


class OutputFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


# --- Privacy ---

class PrivacyParams(BaseModel):
    """epsilon may be +inf, which selects the argmax (non-private) limit."""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(..., gt=0)
    delta: float = Field(0.0, ge=0)
    sensitivity: float = Field(..., gt=0)

    @property
    def score_scale(self) -> float:
        # eps' = eps / (2 * Delta)
        return self.epsilon / (2.0 * self.sensitivity)

    @property
    def is_argmax(self) -> bool:
        return math.isinf(self.epsilon)


class PrivacyBudget(BaseModel):
    epsilon: float
    delta: float


# --- Algorithm configuration ---

class GradientMode(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: GradientKind = GradientKind.EXACT
    samples: Optional[int] = Field(None, ge=1)

    def sample_count(self, n: int, factor: float) -> int:
        """Monte-Carlo samples per gradient: explicit value or ceil(factor * n * ln n)."""
        if self.samples is not None:
            return self.samples
        if n < 2:
            return max(1, math.ceil(factor))
        return math.ceil(factor * n * math.log(n))


class GreedyConfig(BaseModel):
    T: Optional[int] = Field(None, ge=1)
    rho: float = Field(..., gt=0)
    privacy: PrivacyParams
    gradient: GradientMode = GradientMode()
    seed: int = 0
    audit: bool = False
    layer_source: LayerSource = LayerSource.SAMPLED

    def rounds(self, rank: int) -> int:
        if self.T is not None:
            return self.T
        return max(1, rank)


class LayerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu: float = Field(..., gt=0)
    lam: float = Field(..., gt=0, le=1)
    theta: float = Field(..., gt=0, lt=1)
    c: float = Field(1.0, gt=0)

    def sample_count(self, k_layers: int) -> int:
        """m = ceil(c * ln(k / theta) / lambda^2), at least 1."""
        k = max(1, k_layers)
        return max(1, math.ceil(self.c * math.log(k / self.theta) / self.lam ** 2))


class ExperimentConfig(BaseModel):
    instance: Optional[str] = None
    matroid: Optional[str] = None
    algorithm: Algorithm
    epsilon: float = Field(1.0, gt=0)
    delta: float = Field(0.0, ge=0)
    delta_prime: float = Field(1e-6, gt=0, lt=1)
    sensitivity: Optional[float] = Field(None, gt=0)
    rho: Optional[float] = Field(None, gt=0)
    T: Optional[int] = Field(None, ge=1)
    gradient: GradientKind = GradientKind.EXACT
    samples: Optional[int] = Field(None, ge=1)
    mu: float = Field(1.0, gt=0)
    lam: float = Field(0.1, gt=0, lt=1)
    theta: float = Field(0.05, gt=0, lt=1)
    layer_c: float = Field(1.0, gt=0)
    layer_source: LayerSource = LayerSource.SAMPLED
    k: Optional[int] = Field(None, ge=1)
    gamma: float = Field(0.1, gt=0, lt=1)
    retries: int = Field(0, ge=0, le=3)
    repeat: int = Field(1, ge=1)
    seed: int = 0
    out: Optional[str] = None
    csv_out: Optional[str] = None
    transcript_out: Optional[str] = None
    eval_budget: Optional[int] = Field(None, ge=1)
    with_opt: bool = True
    workers: int = Field(settings.WORKERS, ge=1)

    @model_validator(mode="after")
    def _check_covering_radius(self):
        if self.algorithm in (Algorithm.CONT_GREEDY, Algorithm.LAYERED) and self.rho is None:
            raise ValueError("rho is required for continuous greedy algorithms")
        return self


# --- Reports ---

class BudgetReport(BaseModel):
    steps: int
    per_step_epsilon: float
    basic: PrivacyBudget
    advanced: PrivacyBudget
    delta_prime: float


class RunRecord(BaseModel):
    seed: int
    value: float
    evaluations: int
    quality_evaluations: int = 0
    selected: List[str] = []
    x_final: Optional[List[float]] = None
    extension_value: Optional[float] = None
    failed: bool = False
    deviations: int = 0
    directions: Optional[List[List[float]]] = None
    rounding: Optional[Dict[str, Union[int, float]]] = None


class RunReport(BaseModel):
    algorithm: Algorithm
    family: Family
    n_elements: int
    rank: int
    runs: List[RunRecord]
    mean: float
    std: float
    opt: Optional[float] = None
    approximation_ratio: Optional[float] = None
    additive_gap: Optional[float] = None
    failures: int = 0
    privacy: Optional[BudgetReport] = None
    gradient_mode: Optional[str] = None
    error_terms: Dict[str, float] = {}
    wall_time: float
    seed: int
    params: Dict[str, object] = {}


class AuditReport(BaseModel):
    algorithm: Algorithm
    neighbor_index: int
    neighbor_generator: str
    trials: int
    per_step: List[float]
    max_ratio: float
    per_step_bound: float
    composed_total: float
    passed: bool


# --- HTTP requests ---

class ExperimentRequest(BaseModel):
    """Instance and matroid travel as file contents; `config.instance`/`config.matroid` are ignored."""

    instance_text: str
    matroid_text: str
    config: ExperimentConfig


class AuditRequest(ExperimentRequest):
    neighbor_index: int = Field(0, ge=0)
    trials: int = Field(1, ge=1, le=1000)


class CheckRequest(BaseModel):
    instance_text: str
    trials: int = Field(5, ge=0, le=1000)
    seed: int = 0
