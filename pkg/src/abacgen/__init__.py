"""Synthetic ABAC dataset generation.

Build a spec with :func:`parse_spec`, then either run the whole pipeline with
:func:`generate_archive` or drive the stages yourself::

    dataset = generate_dataset(spec, seed)
    policy = generate_rules(dataset, spec, seed)
    index = build_match_index(dataset, policy)
    matrix = acm_matrix(index)
"""

__version__ = "0.1.0"

from .spec_model import DistributionSpec, GenerationSpec, parse_spec, serialize_spec, validate_spec  # noqa: E402
from .generator import AbacDataset, generate_dataset, generate_names, assign_attribute_values  # noqa: E402
from .policy import (  # noqa: E402
    Policy,
    Rule,
    acm_matrix,
    build_match_index,
    evaluate_acm,
    evaluate_tuple_naive,
    generate_rules,
    parse_rule,
    render_rule,
)
from .attestation import attribute_error, build_report, mean_error  # noqa: E402
from .workflow import GenerateOptions, generate_archive  # noqa: E402

__all__ = [
    "AbacDataset",
    "DistributionSpec",
    "GenerateOptions",
    "GenerationSpec",
    "Policy",
    "Rule",
    "acm_matrix",
    "assign_attribute_values",
    "attribute_error",
    "build_match_index",
    "build_report",
    "evaluate_acm",
    "evaluate_tuple_naive",
    "generate_archive",
    "generate_dataset",
    "generate_names",
    "generate_rules",
    "mean_error",
    "parse_rule",
    "parse_spec",
    "render_rule",
    "serialize_spec",
    "validate_spec",
]
