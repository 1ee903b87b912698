import pytest
from fastapi.testclient import TestClient

from conftest import COVERAGE_TEXT
from main import app

client = TestClient(app)

KTOPICS_TEXT = """\
ktopics 2 3 3
v1 t1: u1
v1 t2: u2
v2 t1: u2 u3
v3 t2: u3
"""


def _experiment(config, instance_text=COVERAGE_TEXT, matroid_text="uniform 2\n"):
    return {"instance_text": instance_text, "matroid_text": matroid_text, "config": config}


def test_health():
    assert client.get("/health").json() == {"status": "ok"}


def test_brute_force_experiment():
    response = client.post("/api/v1/experiments", json=_experiment({"algorithm": "brute-force"}))
    assert response.status_code == 200
    body = response.json()
    assert body["mean"] == pytest.approx(0.75)
    assert body["runs"][0]["evaluations"] == 7


def test_cont_greedy_experiment_writes_nothing(tmp_path):
    config = {
        "algorithm": "cont-greedy",
        "rho": 0.5,
        "T": 2,
        "sensitivity": 0.25,
        "out": str(tmp_path / "report.json"),
    }
    response = client.post("/api/v1/experiments", json=_experiment(config))
    assert response.status_code == 200
    body = response.json()
    assert body["privacy"]["steps"] == 2
    assert len(body["runs"][0]["selected"]) == 2
    assert isinstance(body["runs"][0]["rounding"]["parts"], int)
    assert not (tmp_path / "report.json").exists()


def test_ksub_experiment():
    response = client.post(
        "/api/v1/experiments", json=_experiment({"algorithm": "ksub", "epsilon": 2.0}, KTOPICS_TEXT, "uniform 1\n")
    )
    assert response.status_code == 200
    assert response.json()["runs"][0]["selected"][0].split(":")[1] in {"1", "2"}


def test_missing_rho_is_rejected():
    response = client.post("/api/v1/experiments", json=_experiment({"algorithm": "cont-greedy"}))
    assert response.status_code == 422


def test_parse_errors_are_bad_requests():
    response = client.post(
        "/api/v1/experiments", json=_experiment({"algorithm": "greedy-nonprivate"}, "coverage 3 4\nv9: u1\n")
    )
    assert response.status_code == 400
    detail = response.json()["detail"]
    assert detail["code"] == "PARSE_ERROR"
    assert detail["message"].startswith("<instance>:2:")


def test_schema_mismatch():
    response = client.post("/api/v1/experiments", json=_experiment({"algorithm": "ksub"}))
    assert response.status_code == 400
    assert response.json()["detail"]["code"] == "SCHEMA_MISMATCH"


def test_audit_endpoint():
    payload = _experiment({"algorithm": "ksub", "epsilon": 0.5}, KTOPICS_TEXT, "uniform 2\n")
    payload.update(neighbor_index=1, trials=2)
    response = client.post("/api/v1/audit", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["passed"]
    assert body["per_step_bound"] == pytest.approx(0.5)


def test_audit_of_layered_run_is_unsupported():
    response = client.post("/api/v1/audit", json=_experiment({"algorithm": "layered", "rho": 0.5}))
    assert response.status_code == 413
    assert response.json()["detail"]["code"] == "AUDIT_UNSUPPORTED"


def test_check_endpoint():
    response = client.post("/api/v1/check", json={"instance_text": COVERAGE_TEXT, "trials": 5, "seed": 1})
    assert response.status_code == 200
    body = response.json()
    assert body["passed"]
    assert body["family"] == "coverage"
