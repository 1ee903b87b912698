import logging
from dataclasses import dataclass
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from app.core.errors import InputError, SubmaxError
from app.models.main_schema import OutputFormat, RunReport
from app.storage.result_writer import dumps, write_json

logger = logging.getLogger(__name__)

console = Console(stderr=True)


@dataclass
class GlobalOptions:
    seed: int = 0
    out: Optional[Path] = None
    fmt: OutputFormat = OutputFormat.JSON
    eval_budget: Optional[int] = None


def options(ctx: typer.Context) -> GlobalOptions:
    return ctx.obj if isinstance(ctx.obj, GlobalOptions) else GlobalOptions()


def guarded(command: Callable) -> Callable:
    """Map SubmaxError subclasses to their exit codes (2 capability, 3 input, 4 invariant)."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SubmaxError as exc:
            console.print(f"[bold red]error[/] [{exc.code}] {exc.message}")
            raise typer.Exit(code=exc.exit_code) from exc
        except ValidationError as exc:
            console.print(f"[bold red]error[/] [VALIDATION_ERROR] {exc}")
            raise typer.Exit(code=InputError.exit_code) from exc

    return wrapper


def emit(payload: Any, opts: GlobalOptions) -> None:
    """Write `payload` as JSON to --out, or print it to stdout."""
    if opts.out is not None:
        write_json(payload, opts.out)
        console.print(f"wrote {opts.out}")
    else:
        typer.echo(dumps(payload).decode())


def report_paths(opts: GlobalOptions) -> dict:
    """ExperimentConfig output fields for the global --out/--format pair."""
    if opts.out is None:
        return {"out": None, "csv_out": None}
    if opts.fmt == OutputFormat.CSV:
        return {"out": None, "csv_out": str(opts.out)}
    return {"out": str(opts.out), "csv_out": None}


def show_report(report: RunReport, opts: GlobalOptions) -> None:
    table = Table(title=f"{report.algorithm.value} on {report.family.value} (n={report.n_elements}, r={report.rank})")
    table.add_column("metric")
    table.add_column("value", justify="right")
    table.add_row("mean", f"{report.mean:.6g}")
    table.add_row("std", f"{report.std:.6g}")
    if report.opt is not None:
        table.add_row("OPT", f"{report.opt:.6g}")
    if report.approximation_ratio is not None:
        table.add_row("ratio", f"{report.approximation_ratio:.4f}")
    if report.privacy is not None:
        table.add_row("eps (basic)", f"{report.privacy.basic.epsilon:.6g}")
        table.add_row("eps (advanced)", f"{report.privacy.advanced.epsilon:.6g}")
    table.add_row("failures", str(report.failures))
    table.add_row("wall time [s]", f"{report.wall_time:.3f}")
    console.print(table)
    if opts.out is None:
        typer.echo(dumps(report).decode())
    else:
        console.print(f"wrote {opts.out}")
