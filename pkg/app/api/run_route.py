import logging
from pathlib import Path
from typing import Annotated, Optional

import numpy as np
import typer

from app.api.cli_common import emit, guarded, options, report_paths, show_report
from app.core import settings
from app.core.errors import InputError
from app.models.main_schema import Algorithm, ExperimentConfig, GradientKind, LayerSource
from app.storage.instance_loader import load_instance
from app.utils.experiment_runner import run_experiment
from app.utils.property_checks import run_property_suite, run_synthetic_suites

logger = logging.getLogger(__name__)

# --- Shared options ---

Instance = Annotated[Path, typer.Option("--instance", help="Instance file.")]
MatroidFile = Annotated[Path, typer.Option("--matroid", help="Matroid file.")]
Rho = Annotated[float, typer.Option("--rho", help="Covering radius.")]
Eps = Annotated[float, typer.Option("--eps", help="Privacy parameter epsilon (inf = argmax mode).")]
Delta = Annotated[float, typer.Option("--delta", help="Per-step delta.")]
DeltaPrime = Annotated[float, typer.Option("--delta-prime", help="delta' of advanced composition.")]
Sensitivity = Annotated[Optional[float], typer.Option("--sensitivity", help="Override the family's sensitivity.")]
Repeat = Annotated[int, typer.Option("--repeat", help="Independent repeats with derived seeds.")]
Workers = Annotated[int, typer.Option("--workers", help="Worker threads for repeats.")]
NoOpt = Annotated[bool, typer.Option("--no-opt", help="Skip the brute-force OPT.")]
Transcript = Annotated[Optional[Path], typer.Option("--transcript", help="Write the first run's transcript as JSON lines.")]


def _experiment(ctx: typer.Context, **fields) -> None:
    opts = options(ctx)
    cfg = ExperimentConfig(seed=opts.seed, eval_budget=opts.eval_budget, **report_paths(opts), **fields)
    report = run_experiment(cfg)
    show_report(report, opts)


def _continuous_fields(
    instance, matroid, eps, delta, delta_prime, sensitivity, rho, T, mode, samples,
    mu, lam, theta, layer_c, layer_source, repeat, workers, no_opt, transcript,
) -> dict:
    return dict(
        instance=str(instance),
        matroid=str(matroid),
        epsilon=eps,
        delta=delta,
        delta_prime=delta_prime,
        sensitivity=sensitivity,
        rho=rho,
        T=T,
        gradient=mode,
        samples=samples,
        mu=mu,
        lam=lam,
        theta=theta,
        layer_c=layer_c,
        layer_source=layer_source,
        repeat=repeat,
        workers=workers,
        with_opt=not no_opt,
        transcript_out=str(transcript) if transcript else None,
    )


@guarded
def cont_greedy(
    ctx: typer.Context,
    instance: Instance,
    matroid: MatroidFile,
    rho: Rho,
    eps: Eps = 1.0,
    delta: Delta = 0.0,
    delta_prime: DeltaPrime = 1e-6,
    sensitivity: Sensitivity = None,
    T: Optional[int] = typer.Option(None, "--T", help="Rounds (default r(M))."),
    mode: GradientKind = typer.Option(GradientKind.EXACT, "--mode", help="Gradient oracle."),
    samples: Optional[int] = typer.Option(None, "--samples", help="MC samples per gradient."),
    layered: bool = typer.Option(False, "--layered", help="Use layered sampling."),
    mu: float = typer.Option(1.0, "--mu", help="Layer width parameter."),
    lam: float = typer.Option(0.1, "--lambda", help="Layer-share accuracy."),
    theta: float = typer.Option(0.05, "--theta", help="Layer-share failure probability."),
    layer_c: float = typer.Option(1.0, "--layer-c", help="Sample-size constant."),
    layer_source: LayerSource = typer.Option(LayerSource.SAMPLED, "--layer-source"),
    repeat: Repeat = 1,
    workers: Workers = settings.WORKERS,
    no_opt: NoOpt = False,
    transcript: Transcript = None,
):
    """Private continuous greedy over a grid covering, then swap rounding."""
    _experiment(
        ctx,
        algorithm=Algorithm.LAYERED if layered else Algorithm.CONT_GREEDY,
        **_continuous_fields(
            instance, matroid, eps, delta, delta_prime, sensitivity, rho, T, mode, samples,
            mu, lam, theta, layer_c, layer_source, repeat, workers, no_opt, transcript,
        ),
    )


@guarded
def layered(
    ctx: typer.Context,
    instance: Instance,
    matroid: MatroidFile,
    rho: Rho,
    eps: Eps = 1.0,
    delta: Delta = 0.0,
    delta_prime: DeltaPrime = 1e-6,
    sensitivity: Sensitivity = None,
    T: Optional[int] = typer.Option(None, "--T", help="Rounds (default r(M))."),
    mode: GradientKind = typer.Option(GradientKind.EXACT, "--mode"),
    samples: Optional[int] = typer.Option(None, "--samples"),
    mu: float = typer.Option(1.0, "--mu"),
    lam: float = typer.Option(0.1, "--lambda"),
    theta: float = typer.Option(0.05, "--theta"),
    layer_c: float = typer.Option(1.0, "--layer-c"),
    layer_source: LayerSource = typer.Option(LayerSource.SAMPLED, "--layer-source"),
    repeat: Repeat = 1,
    workers: Workers = settings.WORKERS,
    no_opt: NoOpt = False,
    transcript: Transcript = None,
):
    """Continuous greedy with layered sampling of the covering."""
    _experiment(
        ctx,
        algorithm=Algorithm.LAYERED,
        **_continuous_fields(
            instance, matroid, eps, delta, delta_prime, sensitivity, rho, T, mode, samples,
            mu, lam, theta, layer_c, layer_source, repeat, workers, no_opt, transcript,
        ),
    )


@guarded
def ksub(
    ctx: typer.Context,
    instance: Instance,
    matroid: MatroidFile,
    k: Optional[int] = typer.Option(None, "--k", help="Expected topic count."),
    eps: Eps = 1.0,
    delta: Delta = 0.0,
    delta_prime: DeltaPrime = 1e-6,
    sensitivity: Sensitivity = None,
    sampled: bool = typer.Option(False, "--sampled", help="Score a random subset each round."),
    gamma: float = typer.Option(0.1, "--gamma", help="Failure probability of --sampled."),
    retries: int = typer.Option(0, "--retry", help="Resample R up to this many times (max 3)."),
    repeat: Repeat = 1,
    workers: Workers = settings.WORKERS,
    no_opt: NoOpt = False,
    transcript: Transcript = None,
):
    """Private k-submodular greedy under a matroid constraint."""
    _experiment(
        ctx,
        algorithm=Algorithm.KSUB_SAMPLED if sampled else Algorithm.KSUB,
        instance=str(instance),
        matroid=str(matroid),
        k=k,
        epsilon=eps,
        delta=delta,
        delta_prime=delta_prime,
        sensitivity=sensitivity,
        gamma=gamma,
        retries=retries,
        repeat=repeat,
        workers=workers,
        with_opt=not no_opt,
        transcript_out=str(transcript) if transcript else None,
    )


@guarded
def greedy(
    ctx: typer.Context,
    instance: Instance,
    matroid: MatroidFile,
    no_opt: NoOpt = False,
):
    """Non-private greedy baseline."""
    _experiment(
        ctx, algorithm=Algorithm.GREEDY_NONPRIVATE, instance=str(instance), matroid=str(matroid), with_opt=not no_opt
    )


@guarded
def brute_force(
    ctx: typer.Context,
    instance: Instance,
    matroid: MatroidFile,
):
    """Exact optimum by enumerating independent sets (or assignments)."""
    _experiment(ctx, algorithm=Algorithm.BRUTE_FORCE, instance=str(instance), matroid=str(matroid), with_opt=True)


@guarded
def check(
    ctx: typer.Context,
    instance: Optional[Path] = typer.Option(None, "--instance", help="Instance to check."),
    synthetic: bool = typer.Option(False, "--synthetic", help="Check one random instance per family."),
    trials: int = typer.Option(5, "--trials", help="Neighbouring datasets for the sensitivity check."),
    sensitivity: Sensitivity = None,
):
    """Exhaustive monotonicity and (k-)submodularity checks plus measured sensitivity."""
    opts = options(ctx)
    if synthetic:
        suites = run_synthetic_suites(opts.seed, trials)
    elif instance is not None:
        suites = [run_property_suite(load_instance(instance), trials, np.random.default_rng(opts.seed), sensitivity)]
    else:
        raise InputError("Pass --instance or --synthetic.", "MISSING_INSTANCE")
    emit([s.get_summary() for s in suites], opts)
    failed = [s.family for s in suites if not s.passed]
    if failed:
        raise InputError(f"Property checks failed for: {', '.join(failed)}", "PROPERTY_CHECK_FAILED")
