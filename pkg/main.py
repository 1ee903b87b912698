import logging
from pathlib import Path
from typing import Optional

import typer
import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import ORJSONResponse

from app.api import audit_route, covering_route, run_route
from app.api.cli_common import GlobalOptions
from app.api.experiment_route import router as experiment_router
from app.core import settings
from app.models.main_schema import OutputFormat


# FastAPI App Initialization
app = FastAPI(
    title="dp-submax",
    description="Differentially private submodular and k-submodular maximization under matroid constraints.",
    version="1.0.0",
    default_response_class=ORJSONResponse,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Routers
app.include_router(experiment_router, prefix="/api/v1", tags=["Experiments"])


# Health Endpoints
@app.get("/")
async def root():
    return {"message": "Server is running"}


@app.get("/health")
def health_check():
    return {"status": "ok"}


# Command-line interface
cli = typer.Typer(name="dp-submax", no_args_is_help=True, add_completion=False)


@cli.callback()
def main(
    ctx: typer.Context,
    seed: int = typer.Option(0, "--seed", help="Master seed; repeats use derived seeds."),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the result here instead of stdout."),
    fmt: OutputFormat = typer.Option(OutputFormat.JSON, "--format", help="Report format for --out."),
    eval_budget: Optional[int] = typer.Option(None, "--eval-budget", help="Max F evaluations per run."),
    log_level: str = typer.Option(settings.LOG_LEVEL, "--log-level", help="Logging level."),
):
    """dp-submax: private submodular maximization experiments."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    ctx.obj = GlobalOptions(seed=seed, out=out, fmt=fmt, eval_budget=eval_budget)


cli.command("cont-greedy")(run_route.cont_greedy)
cli.command("layered")(run_route.layered)
cli.command("ksub")(run_route.ksub)
cli.command("greedy")(run_route.greedy)
cli.command("brute-force")(run_route.brute_force)
cli.command("check")(run_route.check)
cli.command("audit")(audit_route.audit)
cli.add_typer(covering_route.router, name="covering")


@cli.command("serve")
def serve(
    host: str = typer.Option("0.0.0.0", "--host"),
    port: int = typer.Option(settings.PORT, "--port"),
):
    """Run the HTTP API."""
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    cli()
