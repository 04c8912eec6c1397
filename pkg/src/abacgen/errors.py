"""Exception hierarchy shared by the library, CLI and HTTP service.

Every error carries a stable ``code`` used in machine-readable error payloads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"path": self.path, "message": self.message}


class AbacGenError(Exception):
    code = "Error"

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.code, "message": str(self)}


# -- specification ----------------------------------------------------------

class SpecError(AbacGenError):
    """Input document cannot be turned into a valid generation spec."""

    code = "SpecError"


class SpecSyntaxError(SpecError):
    code = "SyntaxError"


class SchemaError(SpecError):
    code = "SchemaError"

    def __init__(self, path: str, message: str, violations: list[Violation] | None = None):
        self.path = path
        self.violations = violations or [Violation(path, message)]
        super().__init__(f"{path}: {message}")

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        out["path"] = self.path
        out["violations"] = [v.to_dict() for v in self.violations]
        return out


class MergeConflict(SpecError):
    code = "MergeConflict"


# -- sampling / generation --------------------------------------------------

class GenerationError(AbacGenError):
    code = "GenerationError"


class SamplingError(GenerationError):
    code = "SamplingError"

    def __init__(self, message: str, attribute: str | None = None):
        self.attribute = attribute
        super().__init__(message if attribute is None else f"{attribute}: {message}")

    def for_attribute(self, attribute: str) -> "SamplingError":
        return type(self)(str(self), attribute)


class InvalidN(SamplingError):
    code = "InvalidN"


class InvalidLambda(SamplingError):
    code = "InvalidLambda"


class DegenerateTruncation(SamplingError):
    code = "DegenerateTruncation"


class RuleSpaceExhausted(GenerationError):
    code = "RuleSpaceExhausted"


class AcmTooLarge(GenerationError):
    code = "AcmTooLarge"

    def __init__(self, tuples: int, cap: int):
        self.tuples = tuples
        self.cap = cap
        super().__init__(
            f"access control matrix has {tuples} tuples, above the cap of {cap}; "
            "use --sample-tuples K, --no-acm, or raise --max-acm-tuples"
        )


# -- rules / datasets -------------------------------------------------------

class RuleError(AbacGenError):
    code = "RuleError"


class RuleSyntaxError(RuleError):
    code = "RuleSyntaxError"


class UnknownAttribute(RuleError):
    code = "UnknownAttribute"


class ValueNotInDomain(RuleError):
    code = "ValueNotInDomain"


class DatasetError(AbacGenError):
    """A serialized dataset is inconsistent with itself or with its spec."""

    code = "DatasetError"


# -- attestation ------------------------------------------------------------

class LengthMismatch(AbacGenError):
    code = "LengthMismatch"


class EmptyGroup(AbacGenError):
    code = "EmptyGroup"


# -- sketch pipeline --------------------------------------------------------

class SketchError(AbacGenError):
    code = "SketchError"


class ImageRejected(SketchError):
    code = "ImageRejected"


class MediaTypeMismatch(ImageRejected):
    code = "MediaTypeMismatch"


class UnsupportedType(ImageRejected):
    code = "UnsupportedType"


class TooLarge(ImageRejected):
    code = "TooLarge"


class BackendError(SketchError):
    code = "BackendError"


class UnparseableResponse(SketchError):
    code = "UnparseableResponse"


class IdentityMissing(SketchError):
    code = "IdentityMissing"


class ParamOutOfRange(SketchError):
    code = "ParamOutOfRange"


class DuplicateIdentity(SketchError):
    code = "DuplicateIdentity"


class NonContiguousIndices(SketchError):
    code = "NonContiguousIndices"


class ArchiveEmpty(SketchError):
    code = "ArchiveEmpty"
