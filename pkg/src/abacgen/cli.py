"""Command-line interface.

Exit codes: 0 success, 2 spec / input errors, 3 generation errors,
4 I/O errors, 5 per-image sketch failures under ``--strict``.
Failures print a single JSON object on stderr; stdout carries progress only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .errors import AbacGenError, GenerationError
from .spec_model import parse_spec, serialize_spec

EXIT_OK = 0
EXIT_SPEC = 2
EXIT_GENERATION = 3
EXIT_IO = 4
EXIT_STRICT = 5

ARCHIVE_NAME = "dataset.zip"


class CliFailure(Exception):
    def __init__(self, status: int, payload: dict[str, Any]):
        self.status = status
        self.payload = payload
        super().__init__(payload.get("message", ""))


def _fail(status: int, error: str, message: str, **extra) -> CliFailure:
    return CliFailure(status, {"error": error, "message": message, **extra})


def _status_for(exc: AbacGenError) -> int:
    if isinstance(exc, GenerationError):
        return EXIT_GENERATION
    return EXIT_SPEC


def _read(path: str | None, what: str) -> bytes:
    if not path:
        raise _fail(EXIT_SPEC, "MissingArgument", f"{what} is required")
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise _fail(EXIT_IO, "IOError", f"cannot read {what} {path}: {exc.strerror}")


def _write(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as exc:
        raise _fail(EXIT_IO, "IOError", f"cannot write {path}: {exc.strerror}")


def _seed(args) -> int:
    from .workflow import random_seed

    if args.seed is None:
        args.seed = random_seed()
    if not 0 <= args.seed < 2**64:
        raise _fail(EXIT_SPEC, "InvalidSeed", "seed must be a 64-bit unsigned integer")
    print(f"seed: {args.seed}")
    return args.seed


def _options(args, extra_files=None):
    from .workflow import GenerateOptions

    return GenerateOptions(
        max_acm_tuples=args.max_acm_tuples,
        sample_tuples=args.sample_tuples,
        no_acm=args.no_acm,
        integer_codes=args.integer_codes,
        extra_files=extra_files or {},
    )


def _backend(args):
    from .sketch import HttpBackend, MockBackend

    if args.mock_script:
        try:
            return MockBackend.from_file(args.mock_script)
        except OSError as exc:
            raise _fail(EXIT_IO, "IOError", f"cannot read mock script: {exc.strerror}")
    if not args.backend_endpoint:
        raise _fail(EXIT_SPEC, "BackendNotConfigured", "--backend-endpoint (or --mock-script) is required")
    return HttpBackend(args.backend_endpoint, args.backend_model, args.credential_env, args.backend_timeout)


def _generate(spec, seed: int, args, extra_files=None) -> Path:
    from .workflow import generate_archive

    out = Path(args.out) / ARCHIVE_NAME
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "wb") as fh:
            generate_archive(spec, seed, _options(args, extra_files), fh)
    except OSError as exc:
        raise _fail(EXIT_IO, "IOError", f"cannot write {out}: {exc.strerror}")
    except AbacGenError:
        out.unlink(missing_ok=True)
        raise
    print(f"wrote {out}")
    return out


def cmd_generate(args) -> int:
    spec = parse_spec(_read(args.input, "--input"))
    seed = _seed(args)
    _generate(spec, seed, args)
    return EXIT_OK


def _extract(args):
    from .sketch import PromptSet, process_sketch_archive
    from .spec_model import merge_fragment

    minimal_bytes = _read(args.input, "--input (minimal JSON)")
    try:
        minimal = json.loads(minimal_bytes)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise _fail(EXIT_SPEC, "SyntaxError", f"malformed minimal JSON: {exc}")
    if not args.sketches:
        raise _fail(EXIT_SPEC, "MissingArgument", "--sketches is required")
    if not Path(args.sketches).exists():
        raise _fail(EXIT_IO, "IOError", f"sketches path {args.sketches} does not exist")
    result = process_sketch_archive(
        args.sketches,
        _backend(args),
        max_refine=args.max_refine,
        prompts=PromptSet.load(args.prompts),
    )
    for entry in result.log:
        detail = entry.get("attribute") or f"{entry.get('error')}: {entry.get('message')}"
        print(f"{entry['name']}: {entry['status']} ({detail})")
    spec = merge_fragment(minimal, result.fragment)
    return spec, result


def cmd_extract(args) -> int:
    spec, result = _extract(args)
    out = Path(args.out)
    _write(out / "input.json", serialize_spec(spec))
    for name, data in result.comparisons.items():
        _write(out / name, data)
    _write(out / "sketch_log.json", (json.dumps(result.log, indent=2) + "\n").encode("utf-8"))
    print(f"wrote {out / 'input.json'}")
    if args.strict and result.failures:
        raise _fail(EXIT_STRICT, "SketchFailures", f"{len(result.failures)} sketch(es) failed", log=result.failures)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    spec, result = _extract(args)
    if args.strict and result.failures:
        raise _fail(EXIT_STRICT, "SketchFailures", f"{len(result.failures)} sketch(es) failed", log=result.failures)
    seed = _seed(args)
    extra = dict(result.comparisons)
    _generate(spec, seed, args, extra)
    return EXIT_OK


def cmd_attest(args) -> int:
    from .workflow import attest_archive, attest_files

    if args.archive:
        files = attest_archive(_read(args.archive, "--archive"))
    else:
        files = attest_files(_read(args.input, "--input"), _read(args.dataset, "--dataset"))
    out = Path(args.out)
    for name, data in files.items():
        _write(out / name, data)
    print(f"wrote {len(files)} attestation files under {out / 'attestation'}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig.from_env()
    if args.backend_endpoint or args.mock_script:
        config.backend = _backend(args)
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import main as bench_main

    return bench_main(["--subjects", str(args.subjects), "--objects", str(args.objects),
                       "--environments", str(args.environments), "--rules", str(args.rules)])


def _add_generation_flags(p: argparse.ArgumentParser) -> None:
    from .artifacts import DEFAULT_MAX_ACM_TUPLES

    p.add_argument("--seed", type=int, default=None, help="64-bit master seed (default: random, printed)")
    p.add_argument("--max-acm-tuples", type=int, default=DEFAULT_MAX_ACM_TUPLES,
                   help="largest S x O x E enumerated in full (default %(default)s)")
    acm = p.add_mutually_exclusive_group()
    acm.add_argument("--sample-tuples", type=int, default=None, metavar="K",
                     help="write K tuples drawn uniformly without replacement instead of the full matrix")
    acm.add_argument("--no-acm", action="store_true", help="skip ACM.txt and access_data.txt")
    p.add_argument("--integer-codes", action="store_true", help="access_data.txt cells as 1-based value indices")


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend-endpoint", default=None, help="URL of the vision LLM endpoint")
    p.add_argument("--backend-model", default="vision-model", help="model identifier sent to the endpoint")
    p.add_argument("--credential-env", default=None, help="environment variable holding the API key")
    p.add_argument("--backend-timeout", type=float, default=60.0)
    p.add_argument("--mock-script", default=None, help="JSON script for the offline mock backend")
    p.add_argument("--prompts", default=None, help="directory with identity/extract/refine.txt overrides")
    p.add_argument("--max-refine", type=int, default=3)
    p.add_argument("--strict", action="store_true", help="exit 5 if any sketch failed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abacgen", description="Generate synthetic ABAC datasets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="input.json -> dataset archive")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output directory (archive written as dataset.zip)")
    _add_generation_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", help="minimal JSON + sketches -> merged input.json")
    p.add_argument("--input", required=True, help="minimal JSON with sizes and rule counts")
    p.add_argument("--sketches", required=True, help="zip file or directory of sketches")
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("pipeline", help="extract followed by generate")
    p.add_argument("--input", required=True)
    p.add_argument("--sketches", required=True)
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    _add_generation_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("attest", help="recompute attestation from input.json + output.json")
    p.add_argument("--archive", default=None, help="archive written by generate")
    p.add_argument("--input", default=None)
    p.add_argument("--dataset", default=None, help="output.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attest)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="compare numba and numpy ACM kernels")
    p.add_argument("--subjects", type=int, default=400)
    p.add_argument("--objects", type=int, default=200)
    p.add_argument("--environments", type=int, default=50)
    p.add_argument("--rules", type=int, default=100)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliFailure as exc:
        payload, status = exc.payload, exc.status
    except AbacGenError as exc:
        payload, status = exc.to_dict(), _status_for(exc)
    sys.stderr.write(json.dumps(payload) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
