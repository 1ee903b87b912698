import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from app.core import settings
from app.core.errors import CapabilityError, InputError
from app.models.main_schema import (
    K_FAMILIES,
    Algorithm,
    ExperimentConfig,
    GradientKind,
    GradientMode,
    GreedyConfig,
    LayerConfig,
    PrivacyParams,
    RunRecord,
    RunReport,
)
from app.storage.instance_loader import load_instance, load_matroid
from app.storage.result_writer import write_json, write_runs_csv, write_transcript
from app.utils.submodular.continuous_greedy import (
    GreedyResult,
    dp_continuous_greedy,
    dp_layered_greedy,
    layer_count_bound,
    layered_selection_bound,
)
from app.utils.submodular.covering import Covering, build_grid_covering
from app.utils.submodular.ksubmodular import (
    KSetFunction,
    KsubResult,
    brute_force_ksub,
    build_k_function,
    dp_ksub_greedy,
    dp_ksub_greedy_sampled,
)
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.mechanism import MechanismTranscript, em_utility_bound
from app.utils.submodular.multilinear import (
    continuous_greedy_error_terms,
    exact_extension,
    mc_extension,
    subset_weights,
)
from app.utils.submodular.rounding import decompose, swap_round
from app.utils.submodular.setfn import Dataset, GroundSet, SetFunction, build_set_function

logger = logging.getLogger(__name__)

Oracle = Union[SetFunction, KSetFunction]

CONTINUOUS_ALGORITHMS = {Algorithm.CONT_GREEDY, Algorithm.LAYERED}
KSUB_ALGORITHMS = {Algorithm.KSUB, Algorithm.KSUB_SAMPLED}


# --- Baselines and oracles ---

@dataclass
class SubmodularOptimum:
    best: frozenset
    value: float
    checked: int


def brute_force_submodular(fn: SetFunction, matroid: Matroid) -> SubmodularOptimum:
    """Exact max of F over I; ties go to the larger set."""
    if fn.ground != matroid.ground:
        raise InputError("Set function and matroid use different ground sets.", "GROUND_MISMATCH")
    if fn.n > settings.BRUTE_FORCE_CAP:
        raise CapabilityError(
            f"Brute force over {fn.n} elements exceeds cap n <= {settings.BRUTE_FORCE_CAP}.", "ENUMERATION_CAP"
        )
    candidates = list(matroid.iter_independent_sets())
    masks = np.array([fn.ground.mask_of(s) for s in candidates], dtype=bool).reshape(len(candidates), fn.n)
    values = fn.evaluate_batch(masks)
    top = float(values.max())
    tied = np.flatnonzero(values >= top - 1e-12)
    best = max(tied, key=lambda i: len(candidates[i]))
    logger.info("[Brute Force] %d independent sets, OPT=%.6g", len(candidates), top)
    return SubmodularOptimum(best=candidates[best], value=top, checked=len(candidates))


def nonprivate_greedy(fn: SetFunction, matroid: Matroid) -> Tuple[frozenset, float]:
    """Matroid greedy on marginal gains; lowest ground index wins ties."""
    if fn.ground != matroid.ground:
        raise InputError("Set function and matroid use different ground sets.", "GROUND_MISMATCH")
    chosen: List[int] = []
    mask = np.zeros(fn.n, dtype=bool)
    current = float(fn.evaluate_batch(mask[None, :])[0])
    while True:
        addable = [e for e in range(fn.n) if not mask[e] and matroid.is_independent_idx(chosen + [e])]
        if not addable:
            break
        rows = np.repeat(mask[None, :], len(addable), axis=0)
        rows[np.arange(len(addable)), addable] = True
        values = fn.evaluate_batch(rows)
        pick = int(np.argmax(values))
        chosen.append(addable[pick])
        mask[addable[pick]] = True
        current = float(values[pick])
    return fn.ground.subset_of(mask), current


def best_covering_value(fn: SetFunction, covering: Covering) -> Tuple[int, float]:
    """max over covering points of the exact multilinear extension."""
    values = fn.evaluate_batch(fn.all_states())
    scores = np.array([subset_weights(p) @ values for p in covering.points])
    best = int(np.argmax(scores))
    return best, float(scores[best])


# --- Experiment plumbing ---

@dataclass
class ExperimentContext:
    cfg: ExperimentConfig
    dataset: Dataset
    matroid: Matroid
    covering: Optional[Covering] = None

    def build_function(self, eval_budget: Optional[int] = None) -> Oracle:
        if self.dataset.schema_tag in K_FAMILIES:
            return build_k_function(self.dataset, self.cfg.sensitivity, eval_budget)
        return build_set_function(self.dataset, self.cfg.sensitivity, eval_budget)

    def privacy(self, fn: Oracle, epsilon: Optional[float] = None) -> PrivacyParams:
        return PrivacyParams(
            epsilon=self.cfg.epsilon if epsilon is None else epsilon,
            delta=self.cfg.delta,
            sensitivity=fn.sensitivity,
        )

    def greedy_config(self, fn: Oracle, seed: int) -> GreedyConfig:
        return GreedyConfig(
            T=self.cfg.T,
            rho=self.cfg.rho,
            privacy=self.privacy(fn),
            gradient=GradientMode(kind=self.cfg.gradient, samples=self.cfg.samples),
            seed=seed,
            layer_source=self.cfg.layer_source,
        )

    def layer_config(self) -> LayerConfig:
        return LayerConfig(mu=self.cfg.mu, lam=self.cfg.lam, theta=self.cfg.theta, c=self.cfg.layer_c)


@dataclass
class RunOutcome:
    record: RunRecord
    transcript: Optional[MechanismTranscript] = None


def derive_seeds(seed: int, repeat: int) -> List[int]:
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(repeat)]


def _extension_value(scorer: SetFunction, x: np.ndarray, rng: np.random.Generator) -> float:
    if scorer.n <= settings.ENUMERATION_CAP:
        return exact_extension(scorer, x)
    samples = GradientMode().sample_count(scorer.n, settings.MC_SAMPLE_FACTOR)
    return mc_extension(scorer, x, samples, rng)


def _continuous_outcome(ctx: ExperimentContext, result: GreedyResult, seed: int) -> RunOutcome:
    scorer = ctx.build_function()
    rng = np.random.default_rng([seed, 1])
    combination = decompose(ctx.matroid, result.x_final)
    rounded = swap_round(ctx.matroid, combination, rng)
    record = RunRecord(
        seed=seed,
        value=scorer.evaluate(rounded.base),
        evaluations=result.evaluations,
        quality_evaluations=result.quality_evaluations,
        selected=[str(e) for e in ctx.matroid.ground.ordered(rounded.base)],
        x_final=[float(v) for v in result.x_final],
        extension_value=_extension_value(scorer, result.x_final, rng),
        deviations=result.transcript.deviations,
        directions=[[float(v) for v in p] for p in result.chosen_points],
        rounding={
            "parts": len(combination.parts),
            "residual": combination.residual_norm(),
            "merges": rounded.merges,
            "deficit": rounded.deficit,
        },
    )
    return RunOutcome(record=record, transcript=result.transcript)


def _run_cont_greedy(ctx: ExperimentContext, fn: Oracle, seed: int) -> RunOutcome:
    result = dp_continuous_greedy(fn, ctx.matroid, ctx.covering, ctx.greedy_config(fn, seed))
    return _continuous_outcome(ctx, result, seed)


def _run_layered(ctx: ExperimentContext, fn: Oracle, seed: int) -> RunOutcome:
    result = dp_layered_greedy(fn, ctx.matroid, ctx.covering, ctx.greedy_config(fn, seed), ctx.layer_config())
    return _continuous_outcome(ctx, result, seed)


def _ksub_outcome(ctx: ExperimentContext, result: KsubResult, seed: int) -> RunOutcome:
    scorer = ctx.build_function()
    record = RunRecord(
        seed=seed,
        value=scorer.evaluate(result.assignment),
        evaluations=result.evaluations,
        selected=[f"{e}:{t}" for e, t in result.assignment.topics(scorer.ground).items()],
        failed=result.failed,
        deviations=result.transcript.deviations,
    )
    return RunOutcome(record=record, transcript=result.transcript)


def _run_ksub(ctx: ExperimentContext, fn: Oracle, seed: int) -> RunOutcome:
    result = dp_ksub_greedy(fn, ctx.matroid, ctx.privacy(fn), np.random.default_rng(seed))
    return _ksub_outcome(ctx, result, seed)


def _run_ksub_sampled(ctx: ExperimentContext, fn: Oracle, seed: int) -> RunOutcome:
    result = dp_ksub_greedy_sampled(
        fn, ctx.matroid, ctx.privacy(fn), ctx.cfg.gamma, np.random.default_rng(seed), retries=ctx.cfg.retries
    )
    return _ksub_outcome(ctx, result, seed)


def _run_greedy_nonprivate(ctx: ExperimentContext, fn: Oracle, seed: int) -> RunOutcome:
    if isinstance(fn, KSetFunction):
        result = dp_ksub_greedy(fn, ctx.matroid, ctx.privacy(fn, math.inf), np.random.default_rng(seed))
        outcome = _ksub_outcome(ctx, result, seed)
        outcome.transcript = None
        return outcome
    before = fn.evaluations
    chosen, value = nonprivate_greedy(fn, ctx.matroid)
    record = RunRecord(
        seed=seed,
        value=value,
        evaluations=fn.evaluations - before,
        selected=[str(e) for e in ctx.matroid.ground.ordered(chosen)],
    )
    return RunOutcome(record=record)


def _run_brute_force(ctx: ExperimentContext, fn: Oracle, seed: int) -> RunOutcome:
    before = fn.evaluations
    if isinstance(fn, KSetFunction):
        optimum = brute_force_ksub(fn, ctx.matroid)
        selected = [f"{e}:{t}" for e, t in optimum.assignment.topics(fn.ground).items()]
        value = optimum.value
    else:
        best = brute_force_submodular(fn, ctx.matroid)
        selected = [str(e) for e in ctx.matroid.ground.ordered(best.best)]
        value = best.value
    return RunOutcome(record=RunRecord(seed=seed, value=value, evaluations=fn.evaluations - before, selected=selected))


ALGORITHM_RUNNERS: Dict[Algorithm, Callable[[ExperimentContext, Oracle, int], RunOutcome]] = {
    Algorithm.CONT_GREEDY: _run_cont_greedy,
    Algorithm.LAYERED: _run_layered,
    Algorithm.KSUB: _run_ksub,
    Algorithm.KSUB_SAMPLED: _run_ksub_sampled,
    Algorithm.GREEDY_NONPRIVATE: _run_greedy_nonprivate,
    Algorithm.BRUTE_FORCE: _run_brute_force,
}


def _check_compatibility(ctx: ExperimentContext) -> None:
    cfg, family = ctx.cfg, ctx.dataset.schema_tag
    is_k = family in K_FAMILIES
    if cfg.algorithm in KSUB_ALGORITHMS and not is_k:
        raise InputError(f"'{cfg.algorithm.value}' needs a k-submodular instance, got '{family.value}'.", "SCHEMA_MISMATCH")
    if cfg.algorithm in CONTINUOUS_ALGORITHMS and is_k:
        raise InputError(f"'{cfg.algorithm.value}' needs a set-function instance, got '{family.value}'.", "SCHEMA_MISMATCH")
    if cfg.k is not None and is_k and cfg.k != ctx.dataset.k:
        raise InputError(f"--k {cfg.k} does not match the instance's k={ctx.dataset.k}.", "K_MISMATCH")
    if ctx.matroid.ground != GroundSet(ctx.dataset.universe):
        raise InputError("Matroid ground set differs from the instance's elements.", "GROUND_MISMATCH")


def prepare_context(cfg: ExperimentConfig, dataset: Optional[Dataset] = None, matroid: Optional[Matroid] = None) -> ExperimentContext:
    if dataset is None:
        if cfg.instance is None:
            raise InputError("No instance file given.", "MISSING_INSTANCE")
        dataset = load_instance(cfg.instance)
    if matroid is None:
        if cfg.matroid is None:
            raise InputError("No matroid file given.", "MISSING_MATROID")
        matroid = load_matroid(cfg.matroid, GroundSet(dataset.universe))
    ctx = ExperimentContext(cfg=cfg, dataset=dataset, matroid=matroid)
    _check_compatibility(ctx)
    if cfg.algorithm in CONTINUOUS_ALGORITHMS:
        ctx.covering = build_grid_covering(matroid, cfg.rho)
    return ctx


def _optimum(ctx: ExperimentContext) -> Optional[float]:
    if not ctx.cfg.with_opt:
        return None
    fn = ctx.build_function()
    try:
        if isinstance(fn, KSetFunction):
            return brute_force_ksub(fn, ctx.matroid).value
        return brute_force_submodular(fn, ctx.matroid).value
    except CapabilityError as exc:
        logger.warning("[Experiment] OPT skipped: %s", exc.message)
        return None


def _error_terms(ctx: ExperimentContext, fn: Oracle) -> Dict[str, float]:
    cfg, n, rank = ctx.cfg, len(ctx.matroid.ground), ctx.matroid.rank
    if math.isinf(cfg.epsilon) or n == 0:
        return {}
    pp = ctx.privacy(fn)
    beta = 1.0 / max(2, n) ** 2
    if cfg.algorithm in CONTINUOUS_ALGORITHMS:
        terms = continuous_greedy_error_terms(n, cfg.rho)
        terms["selection_per_round"] = em_utility_bound(len(ctx.covering), pp, beta)
        if cfg.algorithm == Algorithm.LAYERED:
            # F is [0,1]-valued, so every gradient component is at most 1.
            layers = layer_count_bound(rank, 1.0, cfg.mu)
            terms["layered_selection_per_round"] = layered_selection_bound(
                len(ctx.covering), layers, ctx.layer_config(), pp, beta
            )
        return terms
    if cfg.algorithm in KSUB_ALGORITHMS:
        k = ctx.dataset.k
        return {"selection_total": rank * em_utility_bound(k * n, pp, beta)}
    return {}


def _gradient_label(cfg: ExperimentConfig, n: int) -> Optional[str]:
    if cfg.algorithm not in CONTINUOUS_ALGORITHMS:
        return None
    mode = GradientMode(kind=cfg.gradient, samples=cfg.samples)
    if mode.kind == GradientKind.EXACT:
        return "exact"
    return f"mc({mode.sample_count(n, settings.MC_SAMPLE_FACTOR)})"


def run_experiment(
    cfg: ExperimentConfig, dataset: Optional[Dataset] = None, matroid: Optional[Matroid] = None
) -> RunReport:
    """
    Run `cfg.algorithm` `cfg.repeat` times with SeedSequence-derived seeds,
    aggregate the objective and write the configured report files.
    """
    started = time.perf_counter()
    ctx = prepare_context(cfg, dataset, matroid)
    runner = ALGORITHM_RUNNERS[cfg.algorithm]
    seeds = derive_seeds(cfg.seed, cfg.repeat)
    logger.info("=== [RUN STARTED] %s repeat=%d seed=%d ===", cfg.algorithm.value, cfg.repeat, cfg.seed)

    def one(seed: int) -> RunOutcome:
        fn = ctx.build_function(cfg.eval_budget)
        return runner(ctx, fn, seed)

    outcomes: List[RunOutcome] = Parallel(n_jobs=cfg.workers, prefer="threads")(delayed(one)(s) for s in seeds)
    values = np.array([o.record.value for o in outcomes if not o.record.failed])
    opt = _optimum(ctx)
    mean = float(values.mean()) if values.size else 0.0
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0

    transcripts = [o.transcript for o in outcomes if o.transcript is not None]
    longest = max(transcripts, key=len) if transcripts else None
    probe = ctx.build_function()
    report = RunReport(
        algorithm=cfg.algorithm,
        family=ctx.dataset.schema_tag,
        n_elements=len(ctx.dataset.universe),
        rank=ctx.matroid.rank,
        runs=[o.record for o in outcomes],
        mean=mean,
        std=std,
        opt=opt,
        approximation_ratio=(mean / opt) if opt else None,
        additive_gap=(opt - mean) if opt is not None else None,
        failures=sum(1 for o in outcomes if o.record.failed),
        privacy=longest.budget_report(cfg.delta_prime) if longest is not None else None,
        gradient_mode=_gradient_label(cfg, len(ctx.dataset.universe)),
        error_terms=_error_terms(ctx, probe),
        wall_time=time.perf_counter() - started,
        seed=cfg.seed,
        params=cfg.model_dump(mode="json", exclude={"out", "csv_out", "transcript_out"}),
    )
    if ctx.covering is not None:
        report.params["covering_size"] = len(ctx.covering)
    logger.info("=== [RUN FINISHED] mean=%.6g opt=%s failures=%d ===", mean, opt, report.failures)

    if cfg.out:
        write_json(report, cfg.out)
    if cfg.csv_out:
        write_runs_csv(report, cfg.csv_out)
    if cfg.transcript_out and transcripts:
        write_transcript(transcripts[0], cfg.transcript_out)
    return report
