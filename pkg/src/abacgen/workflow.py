"""End-to-end generation and re-attestation, shared by the CLI and the service."""

from __future__ import annotations

import json
import logging
import secrets
from dataclasses import dataclass, field
from typing import IO, Any, Mapping

from . import __version__, kernels
from .artifacts import (
    DEFAULT_MAX_ACM_TUPLES,
    OutputBundle,
    dumps_json,
    full_decisions,
    package_zip,
    read_archive,
    sampled_decisions,
    write_access_data,
    write_acm,
    write_output_json,
)
from .attestation import build_report, render_attestation
from .errors import AcmTooLarge, DatasetError, RuleError, SchemaError, SpecSyntaxError
from .generator import AbacDataset, dataset_from_document, generate_dataset, validate_dataset
from .policy import Policy, build_match_index, generate_rules, policy_from_strings, sample_tuple_indices
from .spec_model import GenerationSpec, parse_spec, serialize_spec, validate_spec

log = logging.getLogger(__name__)


def random_seed() -> int:
    return secrets.randbits(64)


@dataclass(frozen=True)
class GenerateOptions:
    max_acm_tuples: int = DEFAULT_MAX_ACM_TUPLES
    sample_tuples: int | None = None
    no_acm: bool = False
    integer_codes: bool = False
    extra_files: Mapping[str, bytes] = field(default_factory=dict)

    def acm_mode(self, spec: GenerationSpec) -> str:
        """``none``, ``sampled`` or ``full``; raises :class:`AcmTooLarge` if none fits."""
        if self.no_acm:
            return "none"
        if self.sample_tuples is not None:
            return "sampled"
        if spec.tuple_count > self.max_acm_tuples:
            raise AcmTooLarge(spec.tuple_count, self.max_acm_tuples)
        return "full"


@dataclass
class GeneratedSystem:
    spec: GenerationSpec
    seed: int
    dataset: AbacDataset
    policy: Policy


def generate_system(spec: GenerationSpec, seed: int) -> GeneratedSystem:
    dataset = generate_dataset(spec, seed)
    policy = generate_rules(dataset, spec, seed)
    return GeneratedSystem(spec, seed, dataset, policy)


def build_bundle(spec: GenerationSpec, seed: int, options: GenerateOptions = GenerateOptions()) -> OutputBundle:
    mode = options.acm_mode(spec)
    if mode != "none":
        violations = validate_spec(spec, require_rules=True)
        if violations:
            raise SchemaError(violations[0].path, violations[0].message, violations)
    log.info("generating %d/%d/%d entities (seed %d)", spec.subject_size, spec.object_size, spec.environment_size, seed)
    system = generate_system(spec, seed)
    dataset, policy = system.dataset, system.policy

    bundle = OutputBundle()
    bundle.add("input.json", serialize_spec(spec))
    bundle.add("output.json", dumps_json(write_output_json(dataset, policy)))
    if mode != "none":
        index = build_match_index(dataset, policy)
        if mode == "sampled":
            linear = sample_tuple_indices(dataset.dims, options.sample_tuples, seed)
            decisions = sampled_decisions(index, linear)
        else:
            decisions = full_decisions(index)
        bundle.add_stream("ACM.txt", lambda out: write_acm(decisions, dataset, out))
        bundle.add_stream(
            "access_data.txt",
            lambda out: write_access_data(decisions, dataset, out, integer_codes=options.integer_codes),
        )
    for name, data in render_attestation(build_report(dataset, spec)).items():
        bundle.add(name, data)
    for name, data in options.extra_files.items():
        bundle.add(name, data)
    bundle.manifest_extra = {
        "generator": "abacgen",
        "version": __version__,
        "seed": seed,
        "acm": {
            "mode": mode,
            "tuples": spec.tuple_count,
            "sampled": options.sample_tuples if mode == "sampled" else None,
            "integer_codes": options.integer_codes,
        },
    }
    return bundle


def generate_archive(
    spec: GenerationSpec, seed: int, options: GenerateOptions = GenerateOptions(), target: IO[bytes] | None = None
) -> bytes | None:
    """Run the whole pipeline and write the zip archive."""
    return package_zip(build_bundle(spec, seed, options), target)


# -- re-attestation from serialized files --------------------------------------

def load_generated(input_json: bytes, output_json: bytes) -> tuple[GenerationSpec, AbacDataset, Policy]:
    """Rebuild spec, dataset and policy from ``input.json`` + ``output.json``.

    Raises :class:`DatasetError` when the two files disagree.
    """
    spec = parse_spec(input_json)
    try:
        doc = json.loads(output_json)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SpecSyntaxError(f"output.json is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DatasetError("output.json must be a JSON object")
    dataset = dataset_from_document(doc)
    problems = validate_dataset(dataset, spec)
    if problems:
        raise DatasetError("; ".join(problems))
    try:
        policy = policy_from_strings(doc.get("permit_rules", []), doc.get("deny_rules", []), dataset)
    except RuleError as exc:
        raise DatasetError(f"rules do not parse against the dataset: {exc}") from None
    return spec, dataset, policy


def attest_files(input_json: bytes, output_json: bytes) -> dict[str, bytes]:
    spec, dataset, _ = load_generated(input_json, output_json)
    return render_attestation(build_report(dataset, spec))


def attest_archive(archive: bytes) -> dict[str, bytes]:
    files = read_archive(archive)
    try:
        return attest_files(files["input.json"], files["output.json"])
    except KeyError as exc:
        raise DatasetError(f"archive lacks {exc}") from None


def describe_kernels() -> str:
    return kernels.active.name


def manifest_of(archive: bytes) -> dict[str, Any]:
    return json.loads(read_archive(archive)["manifest.json"])
