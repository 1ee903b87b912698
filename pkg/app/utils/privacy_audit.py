import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from app.core.errors import CapabilityError, InputError
from app.models.main_schema import Algorithm, AuditReport, ExperimentConfig
from app.utils.experiment_runner import ExperimentContext, Oracle, derive_seeds, prepare_context
from app.utils.submodular.continuous_greedy import dp_continuous_greedy, per_step_epsilon
from app.utils.submodular.ksubmodular import dp_ksub_greedy, dp_ksub_greedy_sampled
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.mechanism import MechanismTranscript, compose_basic
from app.utils.submodular.setfn import NEIGHBOR_GENERATORS, Dataset, make_neighbor

logger = logging.getLogger(__name__)


def _replay_cont_greedy(ctx: ExperimentContext, fn: Oracle, shadow: Oracle, seed: int) -> MechanismTranscript:
    cfg = ctx.greedy_config(fn, seed).model_copy(update={"audit": True})
    return dp_continuous_greedy(fn, ctx.matroid, ctx.covering, cfg, shadow=shadow).transcript


def _replay_ksub(ctx: ExperimentContext, fn: Oracle, shadow: Oracle, seed: int) -> MechanismTranscript:
    return dp_ksub_greedy(fn, ctx.matroid, ctx.privacy(fn), np.random.default_rng(seed), shadow=shadow).transcript


def _replay_ksub_sampled(ctx: ExperimentContext, fn: Oracle, shadow: Oracle, seed: int) -> MechanismTranscript:
    result = dp_ksub_greedy_sampled(
        fn,
        ctx.matroid,
        ctx.privacy(fn),
        ctx.cfg.gamma,
        np.random.default_rng(seed),
        retries=ctx.cfg.retries,
        shadow=shadow,
    )
    return result.transcript


# Algorithms whose every step has a closed-form output distribution.
AUDIT_REPLAYS: Dict[Algorithm, Callable[[ExperimentContext, Oracle, Oracle, int], MechanismTranscript]] = {
    Algorithm.CONT_GREEDY: _replay_cont_greedy,
    Algorithm.KSUB: _replay_ksub,
    Algorithm.KSUB_SAMPLED: _replay_ksub_sampled,
}


def _per_step_bound(ctx: ExperimentContext, fn: Oracle) -> float:
    pp = ctx.privacy(fn)
    if ctx.cfg.algorithm == Algorithm.CONT_GREEDY:
        return per_step_epsilon(pp, ctx.matroid.rank)
    return pp.epsilon


def audit_run(
    cfg: ExperimentConfig,
    neighbor_index: int = 0,
    trials: int = 1,
    dataset: Optional[Dataset] = None,
    matroid: Optional[Matroid] = None,
    neighbor: Optional[Dataset] = None,
) -> AuditReport:
    """
    Replay the algorithm on D while scoring every step on D' too (same
    random draws, same history) and report the exact per-step log-ratios of
    the two output distributions. `neighbor` overrides the generated D'.
    """
    replay = AUDIT_REPLAYS.get(cfg.algorithm)
    if replay is None:
        raise CapabilityError(
            f"'{cfg.algorithm.value}' has no closed-form per-step distribution to audit.", "AUDIT_UNSUPPORTED"
        )
    if trials < 1:
        raise InputError("trials must be >= 1.", "VALUE_RANGE")
    ctx = prepare_context(cfg, dataset, matroid)
    if neighbor is None and not 0 <= neighbor_index < len(ctx.dataset):
        raise InputError(
            f"Neighbour index {neighbor_index} out of range for {len(ctx.dataset)} records.", "INDEX_RANGE"
        )

    logger.info("=== [AUDIT STARTED] %s trials=%d record=%d ===", cfg.algorithm.value, trials, neighbor_index)
    per_step: List[float] = []
    for t, seed in enumerate(derive_seeds(cfg.seed, trials)):
        other = neighbor
        if other is None:
            other = make_neighbor(ctx.dataset, neighbor_index, np.random.default_rng([seed, 2]))
        fn = ctx.build_function(cfg.eval_budget)
        shadow = fn.with_dataset(other)
        transcript = replay(ctx, fn, shadow, seed)
        ratios = [s.audit_ratio if s.audit_ratio is not None else 0.0 for s in transcript.steps]
        if len(ratios) > len(per_step):
            per_step.extend([0.0] * (len(ratios) - len(per_step)))
        for i, ratio in enumerate(ratios):
            per_step[i] = max(per_step[i], ratio)
        logger.debug("[Audit] trial %d: max ratio %.6g over %d steps", t, max(ratios, default=0.0), len(ratios))

    bound = _per_step_bound(ctx, ctx.build_function())
    max_ratio = max(per_step, default=0.0)
    composed, _ = compose_basic((r, 0.0) for r in per_step)
    report = AuditReport(
        algorithm=cfg.algorithm,
        neighbor_index=neighbor_index,
        neighbor_generator="explicit" if neighbor is not None else NEIGHBOR_GENERATORS.get(ctx.dataset.schema_tag, "n/a"),
        trials=trials,
        per_step=per_step,
        max_ratio=max_ratio,
        per_step_bound=bound,
        composed_total=composed,
        passed=max_ratio <= bound + 1e-9,
    )
    logger.info(
        "=== [AUDIT FINISHED] max ratio %.6g vs bound %.6g -> %s ===",
        max_ratio, bound, "PASS" if report.passed else "FAIL",
    )
    return report
