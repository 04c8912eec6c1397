"""Generation spec (``input.json``): types, parsing, validation, serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import SchemaError, SpecSyntaxError, Violation

UNIFORM = "U"
NORMAL = "N"
POISSON = "P"
DISTRIBUTION_CODES = (UNIFORM, NORMAL, POISSON)

# entity kind -> (size key, attribute prefix)
GROUPS = ("subject", "object", "environment")
GROUP_PREFIX = {"subject": "SA", "object": "OA", "environment": "EA"}

KEY_ORDER = (
    "subject_size",
    "object_size",
    "environment_size",
    "permit_rules_count",
    "deny_rules_count",
    "subject_attributes_count",
    "object_attributes_count",
    "environment_attributes_count",
    "subject_attributes_values",
    "object_attributes_values",
    "environment_attributes_values",
    "subject_distributions",
    "object_distributions",
    "environment_distributions",
)
KEY_ALIASES = {
    "accepted_rules_count": "permit_rules_count",
    "denied_rules_count": "deny_rules_count",
}
_DIST_PARAMS = {UNIFORM: (), NORMAL: ("mean", "variance"), POISSON: ("lambda",)}

Number = int | float


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    mean: Number | None = None
    variance: Number | None = None
    lam: Number | None = None

    @classmethod
    def uniform(cls) -> "DistributionSpec":
        return cls(UNIFORM)

    @classmethod
    def normal(cls, mean: Number, variance: Number) -> "DistributionSpec":
        return cls(NORMAL, mean=mean, variance=variance)

    @classmethod
    def poisson(cls, lam: Number) -> "DistributionSpec":
        return cls(POISSON, lam=lam)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"distribution": self.kind}
        if self.mean is not None:
            out["mean"] = self.mean
        if self.variance is not None:
            out["variance"] = self.variance
        if self.lam is not None:
            out["lambda"] = self.lam
        return out

    def __str__(self) -> str:
        if self.kind == NORMAL:
            return f"N(mean={self.mean}, variance={self.variance})"
        if self.kind == POISSON:
            return f"P(lambda={self.lam})"
        return self.kind


@dataclass(frozen=True)
class GenerationSpec:
    subject_size: int
    object_size: int
    environment_size: int
    permit_rules_count: int
    deny_rules_count: int
    subject_attributes_count: int
    object_attributes_count: int
    environment_attributes_count: int
    subject_attributes_values: tuple[int, ...]
    object_attributes_values: tuple[int, ...]
    environment_attributes_values: tuple[int, ...]
    subject_distributions: tuple[DistributionSpec, ...]
    object_distributions: tuple[DistributionSpec, ...]
    environment_distributions: tuple[DistributionSpec, ...]

    def size(self, group: str) -> int:
        return getattr(self, f"{group}_size")

    def cardinalities(self, group: str) -> tuple[int, ...]:
        return getattr(self, f"{group}_attributes_values")

    def distributions(self, group: str) -> tuple[DistributionSpec, ...]:
        return getattr(self, f"{group}_distributions")

    @property
    def tuple_count(self) -> int:
        return self.subject_size * self.object_size * self.environment_size

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for key in KEY_ORDER:
            value = getattr(self, key)
            if key.endswith("_distributions"):
                value = [d.to_dict() for d in value]
            elif isinstance(value, tuple):
                value = list(value)
            out[key] = value
        return out


# -- parsing ----------------------------------------------------------------

def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return (_is_int(value) or isinstance(value, float)) and value == value


def _load_json(document: bytes | str) -> Any:
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecSyntaxError(f"input is not valid UTF-8: {exc}") from None
    try:
        return json.loads(document)
    except json.JSONDecodeError as exc:
        raise SpecSyntaxError(f"malformed JSON: {exc}") from None


def _parse_distribution(obj: Any, path: str) -> DistributionSpec:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    if "distribution" not in obj:
        raise SchemaError(f"{path}.distribution", "missing key")
    kind = obj["distribution"]
    if kind not in DISTRIBUTION_CODES:
        raise SchemaError(f"{path}.distribution", f"unknown distribution code {kind!r}; expected one of U, N, P")
    allowed = _DIST_PARAMS[kind]
    for key in obj:
        if key != "distribution" and key not in allowed:
            raise SchemaError(f"{path}.{key}", f"unexpected key for distribution {kind}")
    for key in allowed:
        if key not in obj:
            raise SchemaError(f"{path}.{key}", f"missing key (required by distribution {kind})")
        if not _is_number(obj[key]):
            raise SchemaError(f"{path}.{key}", "expected a number")
    if kind == NORMAL:
        return DistributionSpec.normal(obj["mean"], obj["variance"])
    if kind == POISSON:
        return DistributionSpec.poisson(obj["lambda"])
    return DistributionSpec.uniform()


def spec_from_dict(obj: Any) -> GenerationSpec:
    """Build and validate a spec from an already-decoded JSON object."""
    if not isinstance(obj, dict):
        raise SchemaError("$", "expected a JSON object at top level")
    data: dict[str, Any] = {}
    for key, value in obj.items():
        canonical = KEY_ALIASES.get(key, key)
        if canonical not in KEY_ORDER:
            raise SchemaError(key, "unknown key")
        if canonical in data:
            raise SchemaError(key, f"duplicates {canonical}")
        data[canonical] = value
    for key in KEY_ORDER:
        if key not in data:
            raise SchemaError(key, "missing key")

    fields: dict[str, Any] = {}
    for key in KEY_ORDER:
        value = data[key]
        if key.endswith("_distributions"):
            if not isinstance(value, list):
                raise SchemaError(key, "expected a list")
            fields[key] = tuple(_parse_distribution(d, f"{key}[{i}]") for i, d in enumerate(value))
        elif key.endswith("_attributes_values"):
            if not isinstance(value, list):
                raise SchemaError(key, "expected a list of integers")
            for i, v in enumerate(value):
                if not _is_int(v):
                    raise SchemaError(f"{key}[{i}]", "expected an integer")
            fields[key] = tuple(value)
        else:
            if not _is_int(value):
                raise SchemaError(key, "expected an integer")
            fields[key] = value

    spec = GenerationSpec(**fields)
    violations = validate_spec(spec)
    if violations:
        first = violations[0]
        raise SchemaError(first.path, first.message, violations)
    return spec


def parse_spec(document: bytes | str) -> GenerationSpec:
    """Parse an ``input.json`` document.

    Raises :class:`SpecSyntaxError` for malformed JSON and :class:`SchemaError`
    (carrying the offending key path) for anything structurally wrong.
    """
    return spec_from_dict(_load_json(document))


# -- validation -------------------------------------------------------------

def _distribution_violations(dist: DistributionSpec, path: str) -> Iterable[Violation]:
    if dist.kind not in DISTRIBUTION_CODES:
        yield Violation(f"{path}.distribution", f"unknown distribution code {dist.kind!r}")
        return
    present = {"mean": dist.mean, "variance": dist.variance, "lambda": dist.lam}
    allowed = _DIST_PARAMS[dist.kind]
    for name, value in present.items():
        if value is not None and name not in allowed:
            yield Violation(f"{path}.{name}", f"not a parameter of distribution {dist.kind}")
    for name in allowed:
        value = present[name]
        if value is None:
            yield Violation(f"{path}.{name}", f"required by distribution {dist.kind}")
        elif not _is_number(value) or value in (float("inf"), float("-inf")):
            yield Violation(f"{path}.{name}", "must be a finite number")
        elif name in ("variance", "lambda") and value <= 0:
            yield Violation(f"{path}.{name}", "must be > 0")


def validate_spec(spec: GenerationSpec, *, require_rules: bool = False) -> list[Violation]:
    """Check every spec invariant; returns one :class:`Violation` per failure."""
    out: list[Violation] = []
    for group in GROUPS:
        key = f"{group}_size"
        size = getattr(spec, key)
        if not _is_int(size) or size < 1:
            out.append(Violation(key, "must be an integer >= 1"))
    for key in ("permit_rules_count", "deny_rules_count"):
        value = getattr(spec, key)
        if not _is_int(value) or value < 0:
            out.append(Violation(key, "must be an integer >= 0"))
    for group in GROUPS:
        count_key = f"{group}_attributes_count"
        values_key = f"{group}_attributes_values"
        dist_key = f"{group}_distributions"
        count = getattr(spec, count_key)
        if not _is_int(count) or count < 0:
            out.append(Violation(count_key, "must be an integer >= 0"))
            count = None
        values = getattr(spec, values_key)
        if count is not None and len(values) != count:
            out.append(Violation(values_key, f"length {len(values)} does not match {count_key}={count}"))
        for i, v in enumerate(values):
            if not _is_int(v) or v < 1:
                out.append(Violation(f"{values_key}[{i}]", "value cardinality must be an integer >= 1"))
        dists = getattr(spec, dist_key)
        if count is not None and len(dists) != count:
            out.append(Violation(dist_key, f"length {len(dists)} does not match {count_key}={count}"))
        for i, d in enumerate(dists):
            out.extend(_distribution_violations(d, f"{dist_key}[{i}]"))
    if require_rules and _is_int(spec.permit_rules_count) and _is_int(spec.deny_rules_count):
        if spec.permit_rules_count + spec.deny_rules_count < 1:
            out.append(Violation("permit_rules_count", "at least one rule is required when the ACM is requested"))
    return out


# -- serialization ----------------------------------------------------------

def serialize_spec(spec: GenerationSpec) -> bytes:
    """Canonical UTF-8 JSON with keys in ``input.json`` order."""
    return (json.dumps(spec.to_dict(), indent=2) + "\n").encode("utf-8")


# -- partial specs produced from sketches ------------------------------------

FRAGMENT_KEYS = tuple(
    f"{group}_{suffix}" for group in GROUPS for suffix in ("attributes_count", "attributes_values", "distributions")
)


@dataclass(frozen=True)
class SpecFragment:
    """Attribute-level part of a spec: counts, cardinalities, distributions."""

    cardinalities: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    distributions: Mapping[str, tuple[DistributionSpec, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for group in GROUPS:
            out[f"{group}_attributes_count"] = len(self.cardinalities.get(group, ()))
        for group in GROUPS:
            out[f"{group}_attributes_values"] = list(self.cardinalities.get(group, ()))
        for group in GROUPS:
            out[f"{group}_distributions"] = [d.to_dict() for d in self.distributions.get(group, ())]
        return out


def merge_fragment(minimal: Mapping[str, Any], fragment: SpecFragment) -> GenerationSpec:
    """Overlay a sketch-derived fragment on a minimal spec (sizes and rule counts).

    The minimal document may repeat attribute counts or cardinalities only if
    they agree with the fragment; any distributions in it are a conflict.
    """
    from .errors import MergeConflict

    if not isinstance(minimal, Mapping):
        raise SchemaError("$", "expected a JSON object at top level")
    merged = dict(minimal)
    for key, value in fragment.to_dict().items():
        if key in minimal:
            if key.endswith("_distributions"):
                raise MergeConflict(f"{key} given both in the minimal JSON and by sketches")
            if minimal[key] != value:
                raise MergeConflict(f"{key}={minimal[key]!r} in the minimal JSON disagrees with sketches ({value!r})")
        merged[key] = value
    return spec_from_dict(merged)
