"""Hand-drawn distribution sketches -> spec fragment.

Per image: sanitize, ask the backend for the attribute identity written on the
sketch, classify the family and extract parameters, then refine by showing the
backend the sketch next to a rendering of its current answer. Identities are
never taken from file names.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..errors import (
    AbacGenError,
    ArchiveEmpty,
    BackendError,
    DuplicateIdentity,
    IdentityMissing,
    ImageRejected,
    NonContiguousIndices,
    ParamOutOfRange,
    SketchError,
    UnparseableResponse,
)
from ..spec_model import GROUPS, DistributionSpec, SpecFragment
from .backends import LlmBackend, LlmRequest, Part
from .imaging import DEFAULT_MAX_IMAGE_BYTES, SanitizedImage, compose_comparison, render_interpretation, sanitize_image

log = logging.getLogger(__name__)

DEFAULT_MAX_REFINE = 3
CONVERGENCE_RTOL = 1e-6
DEFAULT_PARALLELISM = 4
ATTRIBUTE_TYPES = ("SA", "OA", "EA")
TYPE_GROUP = dict(zip(ATTRIBUTE_TYPES, GROUPS))
FAMILY_PARAMS = {"Normal": ("mu", "sigma"), "Poisson": ("lambda",), "Uniform": ("low", "high")}


@dataclass(frozen=True)
class PromptSet:
    identity: str
    extract: str
    refine: str

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptSet":
        """Packaged templates, each overridable by a same-named file in ``directory``."""
        texts = {}
        for name in ("identity", "extract", "refine"):
            override = Path(directory) / f"{name}.txt" if directory else None
            if override is not None and override.is_file():
                texts[name] = override.read_text(encoding="utf-8")
            else:
                texts[name] = resources.files(__package__).joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")
        return cls(**texts)

    def refine_text(self, params: "SketchParams", x_axis_min: float, x_axis_max: float) -> str:
        return (
            self.refine.replace("{current_params}", json.dumps(params.to_dict()))
            .replace("{x_axis_min}", f"{x_axis_min:g}")
            .replace("{x_axis_max}", f"{x_axis_max:g}")
        )


@dataclass(frozen=True)
class SketchParams:
    family: str
    values: tuple[tuple[str, float], ...]

    @property
    def params(self) -> dict[str, float]:
        return dict(self.values)

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, **self.params}

    def close_to(self, other: "SketchParams", rtol: float = CONVERGENCE_RTOL) -> bool:
        if self.family != other.family:
            return False
        for (_, a), (_, b) in zip(self.values, other.values):
            if abs(a - b) > rtol * max(abs(a), abs(b)):
                return False
        return True

    def to_distribution(self) -> DistributionSpec:
        p = self.params
        if self.family == "Normal":
            return DistributionSpec.normal(p["mu"], p["sigma"] ** 2)
        if self.family == "Poisson":
            return DistributionSpec.poisson(p["lambda"])
        # the value count, not (low, high), governs a uniform attribute
        return DistributionSpec.uniform()


@dataclass(frozen=True)
class Identity:
    type: str
    index: int
    values: int
    x_axis_min: float
    x_axis_max: float

    @property
    def attribute(self) -> str:
        return f"{self.type}_{self.index}"


@dataclass(frozen=True)
class SketchExtraction:
    identity: Identity
    params: SketchParams
    iterations: int = 0
    comparisons: tuple[bytes, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def attribute(self) -> str:
        return self.identity.attribute


# -- reply parsing -----------------------------------------------------------------

def _number(reply: dict, key: str) -> float:
    value = reply.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise UnparseableResponse(f"reply lacks numeric {key!r}")
    return float(value)


def parse_params(reply: Any) -> SketchParams:
    if not isinstance(reply, dict):
        raise UnparseableResponse("reply is not a JSON object")
    family = reply.get("family")
    if not isinstance(family, str) or family.capitalize() not in FAMILY_PARAMS:
        raise UnparseableResponse(f"unknown distribution family {family!r}")
    family = family.capitalize()
    values = tuple((k, _number(reply, k)) for k in FAMILY_PARAMS[family])
    p = dict(values)
    if family == "Normal" and not p["sigma"] > 0:
        raise ParamOutOfRange(f"sigma must be > 0, got {p['sigma']}")
    if family == "Poisson" and not p["lambda"] > 0:
        raise ParamOutOfRange(f"lambda must be > 0, got {p['lambda']}")
    if family == "Uniform" and not p["low"] < p["high"]:
        raise ParamOutOfRange(f"uniform range needs low < high, got ({p['low']}, {p['high']})")
    return SketchParams(family, values)


def parse_identity(reply: Any) -> Identity:
    if not isinstance(reply, dict):
        raise UnparseableResponse("identity reply is not a JSON object")
    if reply.get("type") is None and "type" in reply:
        raise IdentityMissing("no attribute label found on the sketch")
    kind = reply.get("type")
    if kind not in ATTRIBUTE_TYPES:
        raise UnparseableResponse(f"identity reply has type {kind!r}; expected SA, OA or EA")
    index, values = reply.get("index"), reply.get("values")
    for key, v in (("index", index), ("values", values)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise UnparseableResponse(f"identity reply needs a positive integer {key!r}")
    x_min = reply.get("x_axis_min", 0)
    x_max = reply.get("x_axis_max", values)
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in (x_min, x_max)) or not x_min < x_max:
        raise UnparseableResponse("identity reply has an invalid x axis range")
    return Identity(kind, index, values, float(x_min), float(x_max))


# -- single-image steps ----------------------------------------------------------------

def _image_request(task: str, prompt: str, image: SanitizedImage, context=None) -> LlmRequest:
    return LlmRequest(
        task=task,
        parts=(Part.of_text(prompt), Part.of_image(image.data, image.media_type)),
        sketch_digest=image.digest,
        context=context or {},
    )


def read_attribute_identity(image: SanitizedImage, backend: LlmBackend, prompts: PromptSet | None = None) -> Identity:
    prompts = prompts or PromptSet.load()
    return parse_identity(backend.complete(_image_request("identity", prompts.identity, image)))


def classify_and_extract(
    image: SanitizedImage, backend: LlmBackend, identity: Identity, prompts: PromptSet | None = None
) -> SketchExtraction:
    prompts = prompts or PromptSet.load()
    params = parse_params(backend.complete(_image_request("extract", prompts.extract, image)))
    return SketchExtraction(identity, params)


def render_params(extraction: SketchExtraction, params: SketchParams | None = None, width=512, height=384) -> bytes:
    params = params or extraction.params
    ident = extraction.identity
    return render_interpretation(params.family, params.params, ident.x_axis_min, ident.x_axis_max, width, height)


def refine_params(
    extraction: SketchExtraction,
    image: SanitizedImage,
    backend: LlmBackend,
    max_iterations: int = DEFAULT_MAX_REFINE,
    prompts: PromptSet | None = None,
) -> SketchExtraction:
    """Iteratively correct parameters from side-by-side comparisons.

    Stops when a round returns the same parameters (relative 1e-6) or after
    ``max_iterations`` rounds. Errors are not fatal: the last valid
    parameters are kept and a warning recorded.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    prompts = prompts or PromptSet.load()
    ident = extraction.identity
    current = extraction.params
    comparisons = list(extraction.comparisons)
    warnings = list(extraction.warnings)
    comparison = compose_comparison(image.data, render_params(extraction, current))
    comparisons.append(comparison)
    rounds = 0
    while rounds < max_iterations:
        rounds += 1
        request = LlmRequest(
            task="refine",
            parts=(
                Part.of_text(prompts.refine_text(current, ident.x_axis_min, ident.x_axis_max)),
                Part.of_image(comparison, "image/png"),
            ),
            sketch_digest=image.digest,
            context={"current_params": current.to_dict()},
        )
        try:
            proposed = parse_params(backend.complete(request))
        except (BackendError, UnparseableResponse, ParamOutOfRange) as exc:
            warnings.append(f"refinement round {rounds} failed ({exc.code}: {exc}); kept previous parameters")
            break
        if proposed.close_to(current):
            break
        current = proposed
        comparison = compose_comparison(image.data, render_params(extraction, current))
        comparisons.append(comparison)
    return replace(extraction, params=current, iterations=rounds, comparisons=tuple(comparisons), warnings=tuple(warnings))


# -- archives ----------------------------------------------------------------------

@dataclass(frozen=True)
class SketchEntry:
    name: str
    data: bytes
    declared_media_type: str | None


def _declared(name: str) -> str | None:
    return mimetypes.guess_type(name)[0]


def _skip(name: str) -> bool:
    parts = Path(name).parts
    return name.endswith("/") or any(p.startswith(".") or p == "__MACOSX" for p in parts)


def load_entries(source: str | Path | bytes | Iterable[SketchEntry]) -> list[SketchEntry]:
    """Entries of a zip (path or bytes), a directory, or an explicit list, sorted by name."""
    if isinstance(source, (bytes, bytearray)):
        import io

        source_zip = zipfile.ZipFile(io.BytesIO(source))
    elif isinstance(source, (str, Path)):
        path = Path(source)
        if path.is_dir():
            entries = [
                SketchEntry(str(p.relative_to(path)), p.read_bytes(), _declared(p.name))
                for p in path.rglob("*")
                if p.is_file() and not _skip(str(p.relative_to(path)))
            ]
            return sorted(entries, key=lambda e: e.name)
        source_zip = zipfile.ZipFile(path)
    else:
        return sorted(source, key=lambda e: e.name)
    with source_zip:
        entries = [
            SketchEntry(n, source_zip.read(n), _declared(n)) for n in source_zip.namelist() if not _skip(n)
        ]
    return sorted(entries, key=lambda e: e.name)


@dataclass
class SketchResult:
    fragment: SpecFragment
    extractions: list[SketchExtraction]
    comparisons: dict[str, bytes]
    log: list[dict[str, Any]] = field(default_factory=list)

    @property
    def failures(self) -> list[dict[str, Any]]:
        return [e for e in self.log if e["status"] != "ok"]


def process_image(
    image: SanitizedImage, backend: LlmBackend, *, max_refine: int = DEFAULT_MAX_REFINE, prompts: PromptSet | None = None
) -> SketchExtraction:
    prompts = prompts or PromptSet.load()
    identity = read_attribute_identity(image, backend, prompts)
    extraction = classify_and_extract(image, backend, identity, prompts)
    return refine_params(extraction, image, backend, max_refine, prompts)


def process_sketch_archive(
    source: str | Path | bytes | Iterable[SketchEntry],
    backend: LlmBackend,
    *,
    max_refine: int = DEFAULT_MAX_REFINE,
    parallelism: int = DEFAULT_PARALLELISM,
    max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES,
    prompts: PromptSet | None = None,
) -> SketchResult:
    prompts = prompts or PromptSet.load()
    entries = load_entries(source)
    log_entries: list[dict[str, Any]] = []
    images: list[tuple[SketchEntry, SanitizedImage]] = []
    for entry in entries:
        try:
            images.append((entry, sanitize_image(entry.data, entry.declared_media_type, max_image_bytes)))
        except ImageRejected as exc:
            log_entries.append({"name": entry.name, "status": "rejected", "error": exc.code, "message": str(exc)})
    if not images:
        raise ArchiveEmpty("no valid sketch image in the archive")

    def run(item):
        entry, image = item
        try:
            return entry, process_image(image, backend, max_refine=max_refine, prompts=prompts), None
        except AbacGenError as exc:
            return entry, None, exc

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        outcomes = list(pool.map(run, images))

    extractions = []
    backend_failures = []
    for entry, extraction, exc in outcomes:
        if exc is not None:
            log_entries.append({"name": entry.name, "status": "failed", "error": exc.code, "message": str(exc)})
            if isinstance(exc, BackendError):
                backend_failures.append(exc)
            continue
        extractions.append(extraction)
        log_entries.append({
            "name": entry.name,
            "status": "ok",
            "attribute": extraction.attribute,
            "values": extraction.identity.values,
            "params": extraction.params.to_dict(),
            "iterations": extraction.iterations,
            "warnings": list(extraction.warnings),
        })
    log_entries.sort(key=lambda e: e["name"])
    if not extractions:
        if backend_failures:
            raise BackendError(f"backend failed for every sketch: {backend_failures[0]}")
        raise SketchError("no sketch could be interpreted")

    fragment = aggregate_config(extractions)
    comparisons = {
        f"attestation/sketches/{x.attribute}.png": x.comparisons[-1] for x in extractions if x.comparisons
    }
    return SketchResult(fragment, extractions, comparisons, log_entries)


def aggregate_config(extractions: Sequence[SketchExtraction]) -> SpecFragment:
    """Order extractions by index within each type; indices must be exactly 1..N."""
    by_type: dict[str, dict[int, SketchExtraction]] = {t: {} for t in ATTRIBUTE_TYPES}
    for x in extractions:
        slot = by_type[x.identity.type]
        if x.identity.index in slot:
            raise DuplicateIdentity(f"two sketches are labeled {x.identity.type}-{x.identity.index}")
        slot[x.identity.index] = x
    cards, dists = {}, {}
    for t, slot in by_type.items():
        indices = sorted(slot)
        if indices != list(range(1, len(indices) + 1)):
            missing = sorted(set(range(1, max(indices, default=0) + 1)) - set(indices))
            raise NonContiguousIndices(f"{t} indices {indices} are not contiguous from 1 (missing {missing})")
        group = TYPE_GROUP[t]
        cards[group] = tuple(slot[i].identity.values for i in indices)
        dists[group] = tuple(slot[i].params.to_distribution() for i in indices)
    return SpecFragment(cards, dists)
