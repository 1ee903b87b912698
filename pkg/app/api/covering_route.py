import logging
from pathlib import Path
from typing import Optional

import numpy as np
import typer

from app.api.cli_common import emit, guarded, options
from app.api.run_route import MatroidFile, Rho
from app.core.errors import InputError
from app.storage.instance_loader import load_instance, load_matroid
from app.storage.result_writer import export_covering, import_covering
from app.utils.submodular.continuous_greedy import preset_parameters
from app.utils.submodular.covering import build_grid_covering, required_grid_size, verify_covering
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.setfn import GroundSet

logger = logging.getLogger(__name__)

router = typer.Typer(help="Build, verify and export grid coverings of P(M).", no_args_is_help=True)

InstanceForGround = typer.Option(None, "--instance", help="Instance supplying the ground set (uniform/partition).")


def _matroid(matroid: Path, instance: Optional[Path]) -> Matroid:
    ground = GroundSet(load_instance(instance).universe) if instance is not None else None
    return load_matroid(matroid, ground)


@router.command("build")
@guarded
def build(
    ctx: typer.Context,
    matroid: MatroidFile,
    rho: Rho,
    instance: Optional[Path] = InstanceForGround,
    preset_eps: Optional[float] = typer.Option(
        None, "--preset-eps", help="Also report the recommended layered setting for this epsilon."
    ),
):
    """Build the grid covering and print its summary."""
    opts = options(ctx)
    m = _matroid(matroid, instance)
    covering = build_grid_covering(m, rho)
    summary = covering.get_summary()
    summary["lattice_size"] = required_grid_size(m, rho)
    if preset_eps is not None:
        summary["preset"] = preset_parameters(len(m.ground), preset_eps)
    emit(summary, opts)


@router.command("export")
@guarded
def export(
    ctx: typer.Context,
    matroid: MatroidFile,
    rho: Rho,
    instance: Optional[Path] = InstanceForGround,
):
    """Write the grid covering as CSV (one point per row) plus a JSON sidecar."""
    opts = options(ctx)
    if opts.out is None:
        raise InputError("covering export needs the global --out option.", "MISSING_OUTPUT")
    m = _matroid(matroid, instance)
    export_covering(build_grid_covering(m, rho), opts.out)


@router.command("verify")
@guarded
def verify(
    ctx: typer.Context,
    matroid: MatroidFile,
    covering: Optional[Path] = typer.Option(None, "--covering", help="Covering CSV (sidecar next to it)."),
    rho: Optional[float] = typer.Option(None, "--rho", help="Build a grid covering instead of loading one."),
    instance: Optional[Path] = InstanceForGround,
    samples: int = typer.Option(10_000, "--samples", help="Random points of P(M) to test."),
):
    """Check max nearest-point distance over random points of P(M) against rho."""
    opts = options(ctx)
    m = _matroid(matroid, instance)
    if covering is not None:
        cover = import_covering(covering, m)
    elif rho is not None:
        cover = build_grid_covering(m, rho)
    else:
        raise InputError("Pass --covering or --rho.", "MISSING_COVERING")
    check = verify_covering(cover, m, samples, np.random.default_rng(opts.seed))
    emit(check.get_summary(), opts)
    if not check.passed:
        raise InputError(
            f"Covering misses a point by {check.max_distance:.6g} > rho={check.rho:.6g}.", "COVERING_TOO_SPARSE"
        )
