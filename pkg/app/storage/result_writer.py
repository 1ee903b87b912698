import csv
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np
import orjson
from pydantic import BaseModel

from app.core.errors import InputError
from app.models.main_schema import OutputFormat, RunReport
from app.utils.submodular.covering import Covering, covering_from_points
from app.utils.submodular.matroid import Matroid
from app.utils.submodular.mechanism import MechanismTranscript

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def _payload(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    return obj


def dumps(obj: Any) -> bytes:
    return orjson.dumps(_payload(obj), option=JSON_OPTIONS)


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(obj: Any, path: PathLike) -> Path:
    path = _prepare(path)
    path.write_bytes(dumps(obj))
    logger.info("[Writer] wrote %s", path)
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        return orjson.loads(path.read_bytes())
    except FileNotFoundError:
        raise InputError(f"{path}: file not found.", "FILE_NOT_FOUND") from None
    except orjson.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc}).", "PARSE_ERROR") from None


RUN_COLUMNS = ["seed", "value", "evaluations", "quality_evaluations", "failed", "deviations", "extension_value", "selected"]


def write_runs_csv(report: RunReport, path: PathLike) -> Path:
    """Per-run series, one row per repeat."""
    path = _prepare(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RUN_COLUMNS)
        for run in report.runs:
            writer.writerow([
                run.seed,
                repr(run.value),
                run.evaluations,
                run.quality_evaluations,
                int(run.failed),
                run.deviations,
                "" if run.extension_value is None else repr(run.extension_value),
                " ".join(run.selected),
            ])
    logger.info("[Writer] wrote %d runs to %s", len(report.runs), path)
    return path


def write_report(report: RunReport, path: PathLike, fmt: OutputFormat = OutputFormat.JSON) -> Path:
    if fmt == OutputFormat.CSV:
        return write_runs_csv(report, path)
    return write_json(report, path)


def write_transcript(transcript: MechanismTranscript, path: PathLike) -> Path:
    """JSON lines, one mechanism step per line."""
    path = _prepare(path)
    with path.open("wb") as handle:
        for line in transcript.to_lines():
            handle.write(orjson.dumps(line, option=orjson.OPT_SERIALIZE_NUMPY))
            handle.write(b"\n")
    return path


def read_transcript(path: PathLike) -> List[Dict[str, Any]]:
    path = Path(path)
    lines = []
    for number, raw in enumerate(path.read_bytes().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            lines.append(orjson.loads(raw))
        except orjson.JSONDecodeError:
            raise InputError(f"{path}:{number}: invalid JSON line.", "PARSE_ERROR") from None
    return lines


# --- Covering CSV + JSON sidecar ---

def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def export_covering(covering: Covering, path: PathLike) -> Path:
    path = _prepare(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([str(e) for e in covering.ground.elements])
        for point in covering.points:
            writer.writerow([repr(float(v)) for v in point])
    meta = {
        "rho": covering.rho,
        "construction": covering.construction,
        "step": covering.step,
        "matroid": covering.matroid_spec,
        "size": len(covering),
        **covering.metadata,
    }
    write_json(meta, sidecar_path(path))
    logger.info("[Covering] exported %d points to %s", len(covering), path)
    return path


def _read_points(path: Path, expected: Iterable[str]) -> np.ndarray:
    try:
        handle = path.open(newline="", encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"{path}: file not found.", "FILE_NOT_FOUND") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        expected = list(expected)
        if header != expected:
            raise InputError(f"{path}:1: header {header} does not match ground set {expected}.", "COVERING_MISMATCH")
        rows = []
        for number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise InputError(f"{path}:{number}: expected {len(expected)} values, got {len(row)}.", "PARSE_ERROR")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise InputError(f"{path}:{number}: non-numeric coordinate.", "PARSE_ERROR") from None
    return np.array(rows, dtype=float).reshape(len(rows), len(expected))


def import_covering(path: PathLike, matroid: Matroid) -> Covering:
    """Load a covering and re-check every point against P(M)."""
    path = Path(path)
    meta = read_json(sidecar_path(path))
    if "rho" not in meta:
        raise InputError(f"{sidecar_path(path)}: sidecar lacks 'rho'.", "PARSE_ERROR")
    if meta.get("matroid") not in (None, matroid.describe()):
        raise InputError(f"{path}: covering was exported for '{meta['matroid']}'.", "COVERING_MISMATCH")
    points = _read_points(path, (str(e) for e in matroid.ground.elements))
    covering = covering_from_points(matroid, points, float(meta["rho"]), meta.get("construction", "explicit"))
    covering.step = meta.get("step")
    return covering
