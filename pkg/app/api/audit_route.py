import logging
from pathlib import Path
from typing import Optional

import typer

from app.api.cli_common import console, emit, guarded, options
from app.api.run_route import Eps, Instance, MatroidFile, Sensitivity
from app.core.errors import InvariantViolation
from app.models.main_schema import Algorithm, ExperimentConfig, GradientKind
from app.storage.instance_loader import load_instance
from app.utils.privacy_audit import audit_run

logger = logging.getLogger(__name__)


@guarded
def audit(
    ctx: typer.Context,
    instance: Instance,
    matroid: MatroidFile,
    algorithm: Algorithm = typer.Option(Algorithm.KSUB, "--algorithm", help="cont-greedy, ksub or ksub-sampled."),
    eps: Eps = 1.0,
    sensitivity: Sensitivity = None,
    rho: Optional[float] = typer.Option(None, "--rho", help="Covering radius (cont-greedy)."),
    T: Optional[int] = typer.Option(None, "--T"),
    mode: GradientKind = typer.Option(GradientKind.EXACT, "--mode"),
    samples: Optional[int] = typer.Option(None, "--samples"),
    gamma: float = typer.Option(0.1, "--gamma"),
    neighbor_index: int = typer.Option(0, "--neighbor-index", help="Record replaced in D'."),
    neighbor: Optional[Path] = typer.Option(None, "--neighbor", help="Explicit neighbouring instance file."),
    trials: int = typer.Option(1, "--trials", help="Independent replays (fresh D' each)."),
):
    """Exact per-step privacy-loss audit on a neighbouring dataset with coupled randomness."""
    opts = options(ctx)
    cfg = ExperimentConfig(
        instance=str(instance),
        matroid=str(matroid),
        algorithm=algorithm,
        epsilon=eps,
        sensitivity=sensitivity,
        rho=rho,
        T=T,
        gradient=mode,
        samples=samples,
        gamma=gamma,
        seed=opts.seed,
        eval_budget=opts.eval_budget,
        with_opt=False,
    )
    other = load_instance(neighbor) if neighbor is not None else None
    report = audit_run(cfg, neighbor_index=neighbor_index, trials=trials, neighbor=other)
    emit(report, opts)
    if not report.passed:
        console.print(f"[bold red]FAIL[/] max ratio {report.max_ratio:.6g} > bound {report.per_step_bound:.6g}")
        raise InvariantViolation("Per-step privacy loss exceeds its bound.", "AUDIT_FAILED")
    console.print(f"[bold green]PASS[/] max ratio {report.max_ratio:.6g} <= bound {report.per_step_bound:.6g}")
