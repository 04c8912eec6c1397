from .backends import HttpBackend, LlmBackend, LlmRequest, MockBackend, Part
from .imaging import SanitizedImage, compose_comparison, render_interpretation, sanitize_image
from .pipeline import (
    Identity,
    PromptSet,
    SketchEntry,
    SketchExtraction,
    SketchParams,
    SketchResult,
    aggregate_config,
    classify_and_extract,
    process_sketch_archive,
    read_attribute_identity,
    refine_params,
)

__all__ = [
    "HttpBackend",
    "Identity",
    "LlmBackend",
    "LlmRequest",
    "MockBackend",
    "Part",
    "PromptSet",
    "SanitizedImage",
    "SketchEntry",
    "SketchExtraction",
    "SketchParams",
    "SketchResult",
    "aggregate_config",
    "classify_and_extract",
    "compose_comparison",
    "process_sketch_archive",
    "read_attribute_identity",
    "refine_params",
    "render_interpretation",
    "sanitize_image",
]
