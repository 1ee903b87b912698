import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np

from app.core.errors import InputError
from app.models.main_schema import GreedyConfig, LayerConfig, LayerSource, PrivacyParams
from app.utils.submodular.covering import Covering, grid_levels
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.mechanism import (
    MechanismTranscript,
    audit_single_step,
    exp_mechanism,
    sample_from_log_weights,
)
from app.utils.submodular.multilinear import GradientEstimate, gradient
from app.utils.submodular.setfn import SetFunction

logger = logging.getLogger(__name__)

# q/w may land a hair below an integer boundary.
LAYER_EPS = 1e-12


@dataclass
class GreedyResult:
    x_final: np.ndarray
    directions: List[int]
    alpha: float
    covering: Covering
    transcript: MechanismTranscript
    evaluations: int
    quality_evaluations: int
    gradient_mode: str
    trajectory: List[np.ndarray] = field(default_factory=list)
    layer_counts: List[int] = field(default_factory=list)
    sample_sizes: List[int] = field(default_factory=list)

    @property
    def chosen_points(self) -> np.ndarray:
        return self.covering.points[self.directions]

    def get_summary(self) -> Dict[str, Any]:
        summary = {
            "x_final": [float(v) for v in self.x_final],
            "directions": [[float(v) for v in p] for p in self.chosen_points],
            "rounds": len(self.directions),
            "evaluations": self.evaluations,
            "quality_evaluations": self.quality_evaluations,
            "gradient_mode": self.gradient_mode,
            "privacy": self.transcript.get_summary(),
        }
        if self.layer_counts:
            summary["layer_counts"] = self.layer_counts
            summary["sample_sizes"] = self.sample_sizes
        return summary


def per_step_epsilon(pp: PrivacyParams, rank: int) -> float:
    """Privacy cost of one round: each ∇f component is a difference of two Δ-sensitive values, so ⟨y, ∇f⟩ moves by at most 2Δ·r(M)."""
    return 2.0 * pp.epsilon * max(1, rank)


def _check_inputs(fn: SetFunction, matroid: Matroid, covering: Covering) -> None:
    if fn.ground != matroid.ground:
        raise InputError("Set function and matroid use different ground sets.", "GROUND_MISMATCH")
    if not covering.matches(matroid):
        raise InputError("Covering was built for a different matroid or dimension.", "COVERING_MISMATCH")
    if len(covering) == 0:
        raise InputError("Covering has no points.", "EMPTY_COVERING")


def _round_gradient(fn: SetFunction, x: np.ndarray, cfg: GreedyConfig, seed: int) -> GradientEstimate:
    return gradient(fn, x, cfg.gradient, np.random.default_rng(seed))


def dp_continuous_greedy(
    fn: SetFunction,
    matroid: Matroid,
    covering: Covering,
    cfg: GreedyConfig,
    shadow: Optional[SetFunction] = None,
) -> GreedyResult:
    """
    Private continuous greedy over a covering of P(M). Each round samples a
    direction y ∈ C with probability ∝ exp(ε'⟨y, ∇f(x)⟩) and steps x += y/T.
    With `shadow` (the neighbouring dataset's function) every round also
    records the exact log-ratio of both output distributions.
    """
    _check_inputs(fn, matroid, covering)
    T = cfg.rounds(matroid.rank)
    alpha = 1.0 / T
    rng = np.random.default_rng(cfg.seed)
    transcript = MechanismTranscript(keep_scores=cfg.audit)
    eps_step = per_step_epsilon(cfg.privacy, matroid.rank)
    before = fn.evaluations

    logger.info("=== [CONT GREEDY STARTED] n=%d rank=%d |C|=%d T=%d ===", fn.n, matroid.rank, len(covering), T)
    x = np.zeros(fn.n)
    directions: List[int] = []
    trajectory = [x.copy()]
    quality_evaluations = 0
    mode = ""
    for t in range(T):
        grad_seed = int(rng.integers(0, 2**63 - 1))
        grad = _round_gradient(fn, x, cfg, grad_seed)
        mode = grad.describe()
        qualities = covering.points @ grad.components
        quality_evaluations += len(covering)
        chosen = exp_mechanism(qualities, cfg.privacy, rng, transcript, eps_step)
        if shadow is not None:
            shadow_grad = _round_gradient(shadow, x, cfg, grad_seed)
            step = transcript.steps[-1]
            step.audit_ratio = audit_single_step(qualities, covering.points @ shadow_grad.components, cfg.privacy)
        directions.append(chosen)
        x = alpha * covering.points[directions].sum(axis=0)
        trajectory.append(x.copy())
        logger.debug("[Cont Greedy] round %d chose point %d (q=%.6g)", t, chosen, qualities[chosen])

    result = GreedyResult(
        x_final=alpha * covering.points[directions].sum(axis=0),
        directions=directions,
        alpha=alpha,
        covering=covering,
        transcript=transcript,
        evaluations=fn.evaluations - before,
        quality_evaluations=quality_evaluations,
        gradient_mode=mode,
        trajectory=trajectory,
    )
    logger.info("=== [CONT GREEDY FINISHED] evaluations=%d ===", result.evaluations)
    return result


# --- Layered sampling ---

@dataclass
class LayerAssignment:
    """1-based layer per point; layer i holds q with (i−1+i_min)·w ≤ q < (i+i_min)·w, w = ln(1+μ)."""

    layers: np.ndarray
    k_layers: int
    i_min: int

    def counts(self) -> np.ndarray:
        return np.bincount(self.layers, minlength=self.k_layers + 1)[1:]


def _raw_layer_index(qualities: np.ndarray, mu: float) -> np.ndarray:
    if mu <= 0:
        raise InputError("mu must be > 0.", "VALUE_RANGE")
    return np.floor(np.asarray(qualities, dtype=float) / math.log1p(mu) + LAYER_EPS).astype(np.int64)


def assign_layers(qualities: np.ndarray, mu: float, anchor: Optional[int] = None) -> LayerAssignment:
    raw = _raw_layer_index(qualities, mu)
    i_min = int(raw.min()) if anchor is None else anchor
    layers = raw - i_min + 1
    return LayerAssignment(layers=layers, k_layers=int(layers.max()), i_min=i_min)


def build_layers(
    covering: Covering, grad: Union[GradientEstimate, np.ndarray], mu: float
) -> LayerAssignment:
    components = grad.components if isinstance(grad, GradientEstimate) else np.asarray(grad, dtype=float)
    return assign_layers(covering.points @ components, mu)


def layer_count_bound(rank: int, grad_max: float, mu: float) -> int:
    """Layers needed to span qualities in [0, r·max ∇f]."""
    return max(1, math.ceil(rank * max(0.0, grad_max) / math.log1p(mu)))


def layer_count_ratio_bound(k_layers: int, sensitivity: float, rank: int, mu: float) -> float:
    """k'/k ≤ 1 + (2Δr/ln(1+μ) + 2)/k; the +2 covers rounding at both ends of the range."""
    return 1.0 + (2.0 * sensitivity * rank / math.log1p(mu) + 2.0) / max(1, k_layers)


def layer_log_weights(counts: np.ndarray, mu: float, score_scale: float) -> np.ndarray:
    """log L̃_i + ε'(i−1)·ln(1+μ); empty layers get −inf."""
    counts = np.asarray(counts, dtype=float)
    with np.errstate(divide="ignore"):
        log_counts = np.log(counts)
    return log_counts + score_scale * np.arange(counts.size) * math.log1p(mu)


def layer_distribution(counts: np.ndarray, mu: float, score_scale: float) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    nonempty = np.flatnonzero(counts > 0)
    if nonempty.size == 0:
        raise InputError("No nonempty layer to choose from.", "EMPTY_LAYERS")
    probs = np.zeros(counts.size)
    if math.isinf(score_scale):
        probs[nonempty[-1]] = 1.0
        return probs
    log_w = layer_log_weights(counts, mu, score_scale)[nonempty]
    log_w -= log_w.max()
    w = np.exp(log_w)
    probs[nonempty] = w / w.sum()
    return probs


def choose_layer(counts: np.ndarray, mu: float, pp: PrivacyParams, rng: np.random.Generator) -> int:
    """0-based index of the chosen layer, drawn ∝ L̃_i (1+μ)^{ε'(i−1)} over nonempty layers."""
    counts = np.asarray(counts, dtype=float)
    nonempty = np.flatnonzero(counts > 0)
    if nonempty.size == 0:
        raise InputError("No nonempty layer to choose from.", "EMPTY_LAYERS")
    if pp.is_argmax:
        return int(nonempty[-1])
    log_w = layer_log_weights(counts, mu, pp.score_scale)[nonempty]
    return int(nonempty[sample_from_log_weights(log_w, rng)])


def dp_layered_greedy(
    fn: SetFunction,
    matroid: Matroid,
    covering: Covering,
    cfg: GreedyConfig,
    lcfg: LayerConfig,
) -> GreedyResult:
    """
    Continuous greedy where each round scores only m sampled covering points,
    bins them into multiplicative layers of width ln(1+μ), draws a layer with
    probability ∝ L̃_i (1+μ)^{ε'(i−1)} and then a point of that layer.
    """
    _check_inputs(fn, matroid, covering)
    T = cfg.rounds(matroid.rank)
    alpha = 1.0 / T
    rng = np.random.default_rng(cfg.seed)
    transcript = MechanismTranscript(keep_scores=cfg.audit)
    eps_step = per_step_epsilon(cfg.privacy, matroid.rank)
    before = fn.evaluations

    logger.info(
        "=== [LAYERED GREEDY STARTED] n=%d rank=%d |C|=%d T=%d mu=%g source=%s ===",
        fn.n, matroid.rank, len(covering), T, lcfg.mu, cfg.layer_source.value,
    )
    x = np.zeros(fn.n)
    directions: List[int] = []
    trajectory = [x.copy()]
    layer_counts: List[int] = []
    sample_sizes: List[int] = []
    quality_evaluations = 0
    mode = ""
    for t in range(T):
        grad = _round_gradient(fn, x, cfg, int(rng.integers(0, 2**63 - 1)))
        mode = grad.describe()
        g = grad.components

        m = lcfg.sample_count(layer_count_bound(matroid.rank, float(g.max(initial=0.0)), lcfg.mu))
        picks = rng.integers(0, len(covering), m)
        sampled_q = covering.points[picks] @ g
        quality_evaluations += m

        if cfg.layer_source == LayerSource.FULL:
            full = assign_layers(covering.points @ g, lcfg.mu)
            quality_evaluations += len(covering)
            sampled = assign_layers(sampled_q, lcfg.mu, anchor=full.i_min)
        else:
            sampled = assign_layers(sampled_q, lcfg.mu)
        counts = sampled.counts()
        layer = choose_layer(counts / m, lcfg.mu, cfg.privacy, rng)

        if cfg.layer_source == LayerSource.FULL:
            members = np.flatnonzero(full.layers == layer + 1)
        else:
            members = picks[sampled.layers == layer + 1]
        chosen = int(members[rng.integers(0, members.size)])

        step = transcript.record(
            n_candidates=sampled.k_layers, chosen=chosen, eps_step=eps_step, delta_step=cfg.privacy.delta,
            scores=sampled_q,
        )
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            step.deviation = f"renormalized over nonempty layers; empty={[int(i) + 1 for i in empty]}"

        directions.append(chosen)
        layer_counts.append(sampled.k_layers)
        sample_sizes.append(m)
        x = alpha * covering.points[directions].sum(axis=0)
        trajectory.append(x.copy())
        logger.debug("[Layered Greedy] round %d: m=%d layers=%d chose layer %d point %d",
                     t, m, sampled.k_layers, layer + 1, chosen)

    result = GreedyResult(
        x_final=alpha * covering.points[directions].sum(axis=0),
        directions=directions,
        alpha=alpha,
        covering=covering,
        transcript=transcript,
        evaluations=fn.evaluations - before,
        quality_evaluations=quality_evaluations,
        gradient_mode=mode,
        trajectory=trajectory,
        layer_counts=layer_counts,
        sample_sizes=sample_sizes,
    )
    logger.info("=== [LAYERED GREEDY FINISHED] evaluations=%d quality_evaluations=%d deviations=%d ===",
                result.evaluations, result.quality_evaluations, transcript.deviations)
    return result


# --- Estimation and error terms ---

@dataclass
class EstimationCheck:
    failure_rate: float
    theta: float
    trials: int
    sample_size: int
    k_layers: int

    @property
    def slack(self) -> float:
        return 3.0 * math.sqrt(self.theta * (1.0 - self.theta) / self.trials)

    @property
    def passed(self) -> bool:
        return self.failure_rate <= self.theta + self.slack


def estimation_error_check(
    covering: Covering,
    grad: Union[GradientEstimate, np.ndarray],
    lcfg: LayerConfig,
    trials: int,
    rng: np.random.Generator,
) -> EstimationCheck:
    """Fraction of trials where some sampled layer share misses the true share by more than λ."""
    if trials < 1:
        raise InputError("trials must be >= 1.", "VALUE_RANGE")
    truth = build_layers(covering, grad, lcfg.mu)
    true_share = truth.counts() / len(covering)
    m = lcfg.sample_count(truth.k_layers)
    sampled_layers = truth.layers[rng.integers(0, len(covering), (trials, m))]
    worst = np.zeros(trials)
    for i in range(truth.k_layers):
        share = (sampled_layers == i + 1).mean(axis=1)
        worst = np.maximum(worst, np.abs(share - true_share[i]))
    failures = int((worst > lcfg.lam).sum())
    return EstimationCheck(
        failure_rate=failures / trials, theta=lcfg.theta, trials=trials, sample_size=m, k_layers=truth.k_layers
    )


def layered_selection_bound(
    n_covering: int, k_layers: int, lcfg: LayerConfig, pp: PrivacyParams, beta: float
) -> float:
    """(2Δ/ε)·ξ with ξ = ln(|C|(1 + kλ|C|)(1+μ)^{ε'}/β): per-round quality gap of the layered choice."""
    if not 0 < beta < 1:
        raise InputError("beta must lie in (0,1).", "VALUE_RANGE")
    if pp.is_argmax:
        return 0.0
    xi = (
        math.log(n_covering)
        + math.log1p(k_layers * lcfg.lam * n_covering)
        + pp.score_scale * math.log1p(lcfg.mu)
        - math.log(beta)
    )
    return 2.0 * pp.sensitivity / pp.epsilon * xi


def preset_parameters(n: int, epsilon: float) -> Dict[str, Any]:
    """Recommended layered-greedy setting for (n, ε) and the grid covering it would need."""
    if n < 1 or epsilon <= 0:
        raise InputError("n must be >= 1 and epsilon > 0.", "VALUE_RANGE")
    rho = epsilon / math.sqrt(n)
    levels = len(grid_levels(rho, n))
    return {
        "rho": rho,
        "mu": math.exp(epsilon),
        "lam": 1.0 / math.sqrt(n),
        "theta": 1.0 / n ** 2,
        "grid_levels": levels,
        "grid_size_log10": n * math.log10(levels),
    }
