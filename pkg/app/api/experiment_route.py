import logging

import numpy as np
from fastapi import APIRouter, HTTPException
from pydantic import ValidationError
from starlette.concurrency import run_in_threadpool

from app.core.errors import CapabilityError, InputError, InvariantViolation, SubmaxError
from app.models.main_schema import (
    AuditReport,
    AuditRequest,
    CheckRequest,
    ExperimentConfig,
    ExperimentRequest,
    RunReport,
)
from app.storage.instance_loader import load_instance, load_matroid
from app.utils.experiment_runner import run_experiment
from app.utils.privacy_audit import audit_run
from app.utils.property_checks import run_property_suite
from app.utils.submodular.setfn import GroundSet

# --- Basic Setup ---
router = APIRouter()
logger = logging.getLogger(__name__)

STATUS_BY_ERROR = {
    InputError: 400,
    CapabilityError: 413,
    InvariantViolation: 500,
}


# --- Helper Functions ---

def _http_error(exc: SubmaxError) -> HTTPException:
    status = next((code for cls, code in STATUS_BY_ERROR.items() if isinstance(exc, cls)), 500)
    return HTTPException(status_code=status, detail=exc.detail)


def _server_config(cfg: ExperimentConfig) -> ExperimentConfig:
    # Requests never write files on the server.
    return cfg.model_copy(update={"out": None, "csv_out": None, "transcript_out": None})


def _load_inputs(request: ExperimentRequest):
    dataset = load_instance("<instance>", text=request.instance_text)
    matroid = load_matroid("<matroid>", GroundSet(dataset.universe), text=request.matroid_text)
    return dataset, matroid


async def _guarded(func, *args, **kwargs):
    try:
        return await run_in_threadpool(func, *args, **kwargs)
    except SubmaxError as exc:
        logger.warning("[HTTP] %s: %s", exc.code, exc.message)
        raise _http_error(exc) from exc
    except ValidationError as exc:
        raise HTTPException(status_code=400, detail={
            "message": str(exc),
            "code": "VALIDATION_ERROR",
        }) from exc
    except Exception as exc:
        logger.exception("[HTTP] unexpected failure")
        raise HTTPException(status_code=500, detail={
            "message": f"Unexpected error: {exc}",
            "code": "INTERNAL_ERROR",
        }) from exc


# --- Endpoints ---

@router.post("/experiments", response_model=RunReport)
async def create_experiment(request: ExperimentRequest):
    logger.info("=== [HTTP EXPERIMENT] %s repeat=%d ===", request.config.algorithm.value, request.config.repeat)

    def work():
        dataset, matroid = _load_inputs(request)
        return run_experiment(_server_config(request.config), dataset=dataset, matroid=matroid)

    return await _guarded(work)


@router.post("/audit", response_model=AuditReport)
async def create_audit(request: AuditRequest):
    logger.info("=== [HTTP AUDIT] %s trials=%d ===", request.config.algorithm.value, request.trials)

    def work():
        dataset, matroid = _load_inputs(request)
        return audit_run(
            _server_config(request.config),
            neighbor_index=request.neighbor_index,
            trials=request.trials,
            dataset=dataset,
            matroid=matroid,
        )

    return await _guarded(work)


@router.post("/check")
async def check_properties(request: CheckRequest):
    def work():
        dataset = load_instance("<instance>", text=request.instance_text)
        suite = run_property_suite(dataset, request.trials, np.random.default_rng(request.seed))
        return suite.get_summary()

    return await _guarded(work)
