"""HTTP API: submit a spec (or sketches) and download the generated archive.

Endpoints:

* ``POST /generate`` body ``input.json``; query ``seed``, ``max_acm_tuples``,
  ``sample_tuples``, ``no_acm``, ``integer_codes`` -> ``application/zip``
* ``POST /extract`` multipart with a ``minimal`` JSON part and one or more
  ``images`` parts -> ``{"input": <merged spec>, "warnings": [...], "log": [...]}``,
  or a zip (``input.json`` + comparison images) when ``Accept: application/zip``
* ``GET /health`` -> ``{"status", "version", "backend_configured"}``
"""

from __future__ import annotations

import asyncio
import io
import json
import logging
import os
import threading
import zipfile
from dataclasses import dataclass
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from starlette.concurrency import run_in_threadpool

from . import __version__
from .artifacts import DEFAULT_MAX_ACM_TUPLES, ZIP_EPOCH
from .errors import AbacGenError, BackendError, GenerationError, SketchError, SpecError
from .spec_model import merge_fragment, parse_spec, serialize_spec

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 1024 * 1024


@dataclass
class ServiceConfig:
    max_body_bytes: int = MAX_BODY_BYTES
    max_upload_bytes: int = 64 * 1024 * 1024
    max_concurrent_jobs: int = 2
    time_budget_s: float = 120.0
    max_acm_tuples: int = DEFAULT_MAX_ACM_TUPLES
    max_refine: int = 3
    backend: Any = None

    @classmethod
    def from_env(cls) -> "ServiceConfig":
        """Read ``ABACGEN_*`` variables; an HTTP backend is set up if an endpoint is given."""
        config = cls(
            max_concurrent_jobs=int(os.environ.get("ABACGEN_MAX_JOBS", 2)),
            time_budget_s=float(os.environ.get("ABACGEN_TIME_BUDGET", 120.0)),
            max_acm_tuples=int(os.environ.get("ABACGEN_MAX_ACM_TUPLES", DEFAULT_MAX_ACM_TUPLES)),
        )
        endpoint = os.environ.get("ABACGEN_BACKEND_ENDPOINT")
        if endpoint:
            from .sketch import HttpBackend

            config.backend = HttpBackend(
                endpoint,
                os.environ.get("ABACGEN_BACKEND_MODEL", "vision-model"),
                os.environ.get("ABACGEN_CREDENTIAL_ENV"),
            )
        return config


def _error(status: int, exc_or_payload, hint: str | None = None, headers=None) -> JSONResponse:
    payload = exc_or_payload.to_dict() if isinstance(exc_or_payload, AbacGenError) else dict(exc_or_payload)
    if hint:
        payload["hint"] = hint
    return JSONResponse(payload, status_code=status, headers=headers)


def _flag(value: str | None) -> bool:
    return value is not None and value.lower() in {"1", "true", "yes", "on", ""}


def _int_param(request: Request, name: str) -> int | None:
    raw = request.query_params.get(name)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"query parameter {name} must be an integer") from None


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    app = FastAPI(title="abacgen", version=__version__)
    app.state.config = config
    slots = threading.BoundedSemaphore(config.max_concurrent_jobs)

    async def run_job(func, *args):
        if not slots.acquire(blocking=False):
            return None, _error(429, {"error": "Busy", "message": "too many concurrent jobs"}, headers={"Retry-After": "5"})
        try:
            result = await asyncio.wait_for(run_in_threadpool(func, *args), timeout=config.time_budget_s)
            return result, None
        except asyncio.TimeoutError:
            return None, _error(
                504, {"error": "TimeBudgetExceeded", "message": f"job exceeded {config.time_budget_s}s"},
                hint="run large jobs with the abacgen CLI",
            )
        finally:
            slots.release()

    @app.get("/health")
    async def health() -> dict:
        backend = config.backend
        return {
            "status": "ok",
            "version": __version__,
            "backend_configured": bool(backend is not None and backend.configured),
        }

    @app.post("/generate")
    async def generate(request: Request) -> Response:
        from .workflow import GenerateOptions, generate_archive, random_seed

        declared = request.headers.get("content-length")
        if declared is not None and declared.isdigit() and int(declared) > config.max_body_bytes:
            return _error(413, {"error": "TooLarge", "message": f"body exceeds {config.max_body_bytes} bytes"})
        body = await request.body()
        if len(body) > config.max_body_bytes:
            return _error(413, {"error": "TooLarge", "message": f"body exceeds {config.max_body_bytes} bytes"})
        try:
            seed = _int_param(request, "seed")
            options = GenerateOptions(
                max_acm_tuples=_int_param(request, "max_acm_tuples") or config.max_acm_tuples,
                sample_tuples=_int_param(request, "sample_tuples"),
                no_acm=_flag(request.query_params.get("no_acm")),
                integer_codes=_flag(request.query_params.get("integer_codes")),
            )
        except ValueError as exc:
            return _error(400, {"error": "BadQuery", "message": str(exc)})
        if seed is None:
            seed = random_seed()
        if not 0 <= seed < 2**64:
            return _error(400, {"error": "InvalidSeed", "message": "seed must be a 64-bit unsigned integer"})
        try:
            spec = parse_spec(body)
            archive, failure = await run_job(generate_archive, spec, seed, options)
        except SpecError as exc:
            return _error(400, exc)
        except GenerationError as exc:
            hint = "pass sample_tuples=K or no_acm=true, or use the CLI" if exc.code == "AcmTooLarge" else None
            return _error(422, exc, hint)
        except Exception:
            log.exception("generation failed")
            return _error(500, {"error": "InternalError", "message": "internal error"})
        if failure is not None:
            return failure
        return Response(
            archive,
            media_type="application/zip",
            headers={"Content-Disposition": 'attachment; filename="dataset.zip"', "X-Seed": str(seed)},
        )

    @app.post("/extract")
    async def extract(request: Request) -> Response:
        from .sketch import SketchEntry, process_sketch_archive

        if config.backend is None:
            return _error(503, {"error": "BackendNotConfigured", "message": "no vision backend configured"})
        try:
            form = await request.form(max_part_size=config.max_upload_bytes)
        except Exception as exc:
            return _error(400, {"error": "BadMultipart", "message": str(exc)})
        minimal_part = form.get("minimal")
        if minimal_part is None:
            return _error(400, {"error": "MissingPart", "message": "multipart field 'minimal' is required"})
        raw = await minimal_part.read() if hasattr(minimal_part, "read") else str(minimal_part).encode()
        try:
            minimal = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            return _error(400, {"error": "SyntaxError", "message": f"malformed minimal JSON: {exc}"})
        entries = []
        for part in form.getlist("images"):
            if not hasattr(part, "read"):
                continue
            entries.append(SketchEntry(part.filename or "upload", await part.read(), part.content_type))

        def job():
            result = process_sketch_archive(entries, config.backend, max_refine=config.max_refine)
            return result, merge_fragment(minimal, result.fragment)

        try:
            outcome, failure = await run_job(job)
        except BackendError as exc:
            return _error(502, exc, hint="retry later", headers={"Retry-After": "30"})
        except (SketchError, SpecError) as exc:
            return _error(400, exc)
        except Exception:
            log.exception("extraction failed")
            return _error(500, {"error": "InternalError", "message": "internal error"})
        if failure is not None:
            return failure
        result, spec = outcome
        warnings = [f"{e['name']}: {e['error']}: {e['message']}" for e in result.failures]
        warnings += [f"{e['name']}: {w}" for e in result.log if e["status"] == "ok" for w in e["warnings"]]
        if "application/zip" in request.headers.get("accept", ""):
            buf = io.BytesIO()
            with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
                zf.writestr(zipfile.ZipInfo("input.json", ZIP_EPOCH), serialize_spec(spec))
                for name, data in sorted(result.comparisons.items()):
                    zf.writestr(zipfile.ZipInfo(name, ZIP_EPOCH), data)
                zf.writestr(zipfile.ZipInfo("sketch_log.json", ZIP_EPOCH), json.dumps(result.log, indent=2))
            return Response(buf.getvalue(), media_type="application/zip")
        return JSONResponse({"input": spec.to_dict(), "warnings": warnings, "log": result.log})

    return app
