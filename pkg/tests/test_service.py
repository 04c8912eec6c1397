import io
import json
import logging
import threading
import zipfile

import httpx
import pytest
from fastapi.testclient import TestClient

from abacgen import __version__
from abacgen.cli import main
from abacgen.errors import BackendError
from abacgen.service import ServiceConfig, create_app
from abacgen.sketch import HttpBackend, MockBackend


@pytest.fixture
def client():
    return TestClient(create_app(ServiceConfig()))


@pytest.fixture
def mock_client(mock_script):
    return TestClient(create_app(ServiceConfig(backend=MockBackend(mock_script))))


def _multipart(fixtures_dir, directory="sketches", minimal=None, content_type=None):
    minimal = minimal if minimal is not None else (fixtures_dir / "minimal.json").read_bytes()
    files = [("minimal", ("minimal.json", minimal, "application/json"))]
    for p in sorted((fixtures_dir / directory).iterdir()):
        ctype = content_type or ("image/png" if p.suffix == ".png" else "text/plain")
        files.append(("images", (p.name, p.read_bytes(), ctype)))
    return files


def test_health(client, mock_client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "version": __version__, "backend_configured": False}
    assert mock_client.get("/health").json()["backend_configured"] is True


def test_health_without_credential(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY", raising=False)
    app = create_app(ServiceConfig(backend=HttpBackend("http://x", "m", "NO_SUCH_KEY")))
    r = TestClient(app).get("/health")
    assert r.status_code == 200 and r.json()["backend_configured"] is False


def test_generate_matches_cli(client, example_spec_bytes, tmp_path, capsys):
    r = client.post("/generate?seed=42", content=example_spec_bytes)
    assert r.status_code == 200
    assert r.headers["content-type"] == "application/zip"
    assert r.headers["x-seed"] == "42"
    p = tmp_path / "input.json"
    p.write_bytes(example_spec_bytes)
    assert main(["generate", "--input", str(p), "--out", str(tmp_path), "--seed", "42"]) == 0
    assert r.content == (tmp_path / "dataset.zip").read_bytes()


def test_generate_random_seed_header(client, example_spec_bytes):
    r = client.post("/generate", content=example_spec_bytes)
    assert r.status_code == 200 and int(r.headers["x-seed"]) >= 0


def test_generate_malformed(client):
    r = client.post("/generate", content=b"{nope")
    assert r.status_code == 400 and r.json()["error"] == "SyntaxError"


def test_generate_schema_violation(client, example_spec_bytes):
    doc = json.loads(example_spec_bytes)
    doc["subject_distributions"][1]["variance"] = 0
    r = client.post("/generate", content=json.dumps(doc))
    assert r.status_code == 400
    body = r.json()
    assert body["error"] == "SchemaError"
    assert body["violations"][0]["path"] == "subject_distributions[1].variance"


def test_generate_too_large(example_spec_bytes):
    client = TestClient(create_app(ServiceConfig(max_body_bytes=100)))
    r = client.post("/generate", content=example_spec_bytes)
    assert r.status_code == 413


def test_generate_default_body_limit(client):
    r = client.post("/generate", content=b" " * (1024 * 1024 + 1))
    assert r.status_code == 413


def test_generate_acm_too_large(client, example_spec_bytes):
    doc = json.loads(example_spec_bytes)
    doc.update(subject_size=100_000, object_size=10_000, environment_size=100)
    r = client.post("/generate?seed=1", content=json.dumps(doc))
    assert r.status_code == 422
    body = r.json()
    assert body["error"] == "AcmTooLarge" and "sample_tuples" in body["hint"]


def test_generate_options(client, example_spec_bytes):
    r = client.post("/generate?seed=1&sample_tuples=4", content=example_spec_bytes)
    files = zipfile.ZipFile(io.BytesIO(r.content))
    assert len(files.read("ACM.txt").decode().splitlines()) == 5
    r = client.post("/generate?seed=1&no_acm=true", content=example_spec_bytes)
    assert "ACM.txt" not in zipfile.ZipFile(io.BytesIO(r.content)).namelist()


@pytest.mark.parametrize("query", ["seed=abc", "seed=-1", "sample_tuples=x"])
def test_generate_bad_query(client, example_spec_bytes, query):
    assert client.post(f"/generate?{query}", content=example_spec_bytes).status_code == 400


def test_extract_json(mock_client, fixtures_dir, example_spec_bytes):
    r = mock_client.post("/extract", files=_multipart(fixtures_dir))
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["input"]["subject_attributes_values"] == [3, 4]
    assert any(w.startswith("notes.txt") for w in body["warnings"])
    g = mock_client.post("/generate?seed=2", content=json.dumps(body["input"]))
    assert g.status_code == 200


def test_extract_disguised_text_is_warning(mock_client, fixtures_dir):
    r = mock_client.post("/extract", files=_multipart(fixtures_dir, content_type="image/png"))
    assert r.status_code == 200
    assert any("MediaTypeMismatch" in w for w in r.json()["warnings"])


def test_extract_zip(mock_client, fixtures_dir):
    r = mock_client.post("/extract", files=_multipart(fixtures_dir), headers={"Accept": "application/zip"})
    assert r.status_code == 200 and r.headers["content-type"] == "application/zip"
    names = zipfile.ZipFile(io.BytesIO(r.content)).namelist()
    assert "input.json" in names and "attestation/sketches/SA_1.png" in names


def test_extract_backend_failure_502(fixtures_dir):
    client = TestClient(create_app(ServiceConfig(backend=MockBackend({}))))
    r = client.post("/extract", files=_multipart(fixtures_dir))
    assert r.status_code == 502 and "retry-after" in r.headers


def test_extract_backend_timeout_502(fixtures_dir):
    def handler(request):
        raise httpx.ReadTimeout("slow")

    backend = HttpBackend("http://vision.test", "m", transport=httpx.MockTransport(handler))
    r = TestClient(create_app(ServiceConfig(backend=backend))).post("/extract", files=_multipart(fixtures_dir))
    assert r.status_code == 502


def test_extract_without_backend(client, fixtures_dir):
    assert client.post("/extract", files=_multipart(fixtures_dir)).status_code == 503


def test_extract_400s(mock_client, fixtures_dir):
    assert mock_client.post("/extract", files=_multipart(fixtures_dir, "gap")).status_code == 400
    conflict = json.dumps({**json.loads((fixtures_dir / "minimal.json").read_text()),
                           "subject_distributions": [{"distribution": "U"}]}).encode()
    r = mock_client.post("/extract", files=_multipart(fixtures_dir, minimal=conflict))
    assert r.status_code == 400 and r.json()["error"] == "MergeConflict"
    only_text = [("minimal", ("m.json", (fixtures_dir / "minimal.json").read_bytes(), "application/json")),
                 ("images", ("a.txt", b"hello", "text/plain"))]
    assert mock_client.post("/extract", files=only_text).status_code == 400
    no_minimal = [("images", ("a.png", (fixtures_dir / "sketches" / "zz_first.png").read_bytes(), "image/png"))]
    assert mock_client.post("/extract", files=no_minimal).status_code == 400


class _BlockingBackend:
    configured = True

    def __init__(self):
        self.entered = threading.Event()
        self.release = threading.Event()

    def complete(self, request):
        self.entered.set()
        self.release.wait(10)
        raise BackendError("released")


def test_concurrency_limit_429(fixtures_dir, example_spec_bytes):
    backend = _BlockingBackend()
    client = TestClient(create_app(ServiceConfig(backend=backend, max_concurrent_jobs=1)))
    result = {}
    t = threading.Thread(target=lambda: result.setdefault("r", client.post("/extract", files=_multipart(fixtures_dir))))
    t.start()
    try:
        assert backend.entered.wait(10)
        r = client.post("/generate?seed=1", content=example_spec_bytes)
        assert r.status_code == 429 and "retry-after" in r.headers
    finally:
        backend.release.set()
        t.join(10)
    assert result["r"].status_code == 502
    assert client.post("/generate?seed=1", content=example_spec_bytes).status_code == 200


def test_time_budget_504(fixtures_dir):
    backend = _BlockingBackend()
    client = TestClient(create_app(ServiceConfig(backend=backend, time_budget_s=0.2)))
    try:
        r = client.post("/extract", files=_multipart(fixtures_dir))
        assert r.status_code == 504 and "hint" in r.json()
    finally:
        backend.release.set()


def test_logs_never_contain_secrets_or_image_bytes(monkeypatch, fixtures_dir, caplog):
    monkeypatch.setenv("SVC_TEST_KEY", "top-secret-value")

    def handler(request):
        return httpx.Response(500, text="upstream broke")

    backend = HttpBackend("http://vision.test", "m", "SVC_TEST_KEY", transport=httpx.MockTransport(handler))
    client = TestClient(create_app(ServiceConfig(backend=backend)))
    with caplog.at_level(logging.DEBUG):
        r = client.post("/extract", files=_multipart(fixtures_dir))
    assert r.status_code == 502
    assert "top-secret-value" not in caplog.text and "top-secret-value" not in r.text
    assert "PNG" not in caplog.text


def test_config_from_env(monkeypatch):
    monkeypatch.setenv("ABACGEN_MAX_JOBS", "5")
    monkeypatch.setenv("ABACGEN_BACKEND_ENDPOINT", "http://vision.test")
    monkeypatch.setenv("ABACGEN_CREDENTIAL_ENV", "SOME_KEY")
    config = ServiceConfig.from_env()
    assert config.max_concurrent_jobs == 5
    assert config.backend.endpoint == "http://vision.test" and config.backend.credential_env == "SOME_KEY"
