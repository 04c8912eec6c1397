"""Expected-vs-actual value counts and the attribute-level error metric.

For an attribute with values ``a_1..a_n``::

    eps = sum_k |E[Count(a_k)] - Actual(a_k)| / Actual(a_k)

A value nobody received (``Actual = 0``) contributes ``|E|`` and sets a
warning on the report. Each attribute also carries ``eps / n * 100``, the
mean relative error per value in percent, which is the scale used when
comparing attribute groups.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from html import escape
from typing import Sequence

import numpy as np

from .errors import EmptyGroup, LengthMismatch
from .generator import AbacDataset
from .sampling import expected_counts
from .spec_model import GROUPS, GROUP_PREFIX, DistributionSpec, GenerationSpec


def attribute_error(expected: Sequence[float], actual: Sequence[int]) -> float:
    e = np.asarray(expected, dtype=float)
    a = np.asarray(actual, dtype=float)
    if e.shape != a.shape or e.ndim != 1:
        raise LengthMismatch(f"expected has {e.size} entries, actual has {a.size}")
    if e.size == 0:
        raise LengthMismatch("at least one value is required")
    denom = np.where(a == 0, 1.0, a)
    return float(np.sum(np.abs(e - a) / denom))


def mean_error(errors: Sequence[float]) -> float:
    if len(errors) == 0:
        raise EmptyGroup("mean error of an empty attribute group")
    return float(sum(errors) / len(errors))


@dataclass(frozen=True)
class AttributeAttestation:
    attribute: str
    distribution: DistributionSpec
    values: tuple[str, ...]
    expected: tuple[float, ...]
    actual: tuple[int, ...]
    epsilon: float
    zero_actual: bool

    @property
    def n_values(self) -> int:
        return len(self.values)

    @property
    def mean_percent_error(self) -> float:
        return self.epsilon / self.n_values * 100.0


@dataclass(frozen=True)
class GroupAttestation:
    kind: str
    population: int
    attributes: tuple[AttributeAttestation, ...]

    @property
    def prefix(self) -> str:
        return GROUP_PREFIX[self.kind]

    @property
    def mean_epsilon(self) -> float | None:
        return mean_error([a.epsilon for a in self.attributes]) if self.attributes else None

    @property
    def mean_percent_error(self) -> float | None:
        return mean_error([a.mean_percent_error for a in self.attributes]) if self.attributes else None


@dataclass(frozen=True)
class AttestationReport:
    groups: tuple[GroupAttestation, ...]
    warnings: tuple[str, ...] = field(default=())

    def group(self, kind: str) -> GroupAttestation:
        for g in self.groups:
            if g.kind == kind:
                return g
        raise KeyError(kind)

    @property
    def attributes(self) -> list[AttributeAttestation]:
        return [a for g in self.groups for a in g.attributes]

    @property
    def overall_mean_epsilon(self) -> float | None:
        attrs = self.attributes
        return mean_error([a.epsilon for a in attrs]) if attrs else None

    @property
    def overall_mean_percent_error(self) -> float | None:
        attrs = self.attributes
        return mean_error([a.mean_percent_error for a in attrs]) if attrs else None

    def summary(self) -> dict:
        return {
            "groups": [
                {
                    "type": g.prefix,
                    "population": g.population,
                    "attributes": len(g.attributes),
                    "mean_epsilon": g.mean_epsilon,
                    "mean_percent_error_per_value": g.mean_percent_error,
                }
                for g in self.groups
            ],
            "overall": {
                "attributes": len(self.attributes),
                "mean_epsilon": self.overall_mean_epsilon,
                "mean_percent_error_per_value": self.overall_mean_percent_error,
            },
            "per_attribute": [
                {
                    "attribute": a.attribute,
                    "distribution": a.distribution.to_dict(),
                    "epsilon": a.epsilon,
                    "mean_percent_error_per_value": a.mean_percent_error,
                    "zero_actual": a.zero_actual,
                }
                for a in self.attributes
            ],
            "warnings": list(self.warnings),
        }


def build_report(dataset: AbacDataset, spec: GenerationSpec) -> AttestationReport:
    groups = []
    warnings = []
    for kind in GROUPS:
        group = dataset.group(kind)
        dists = spec.distributions(kind)
        attrs = []
        for j, attribute in enumerate(group.attributes):
            n = len(group.values[attribute])
            actual = np.bincount(group.codes[:, j], minlength=n)
            expected = expected_counts(dists[j], n, group.size)
            eps = attribute_error(expected, actual)
            zero = bool((actual == 0).any())
            if zero:
                warnings.append(f"{attribute}: a value has actual count 0; its term uses denominator 1")
            attrs.append(
                AttributeAttestation(
                    attribute, dists[j], tuple(group.values[attribute]),
                    tuple(float(x) for x in expected), tuple(int(x) for x in actual), eps, zero,
                )
            )
        groups.append(GroupAttestation(kind, group.size, tuple(attrs)))
    return AttestationReport(tuple(groups), tuple(warnings))


# -- rendering ------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def counts_csv(report: AttestationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["attribute", "value", "expected", "actual", "abs_diff", "rel_err"])
    for a in report.attributes:
        for value, e, act in zip(a.values, a.expected, a.actual):
            diff = abs(e - act)
            writer.writerow([a.attribute, value, _fmt(e), act, _fmt(diff), _fmt(diff / act if act else diff)])
    return buf.getvalue()


_DIST_LABEL = {"U": "Uniform", "N": "Normal", "P": "Poisson"}


def attribute_svg(a: AttributeAttestation, width: int = 640, height: int = 360) -> str:
    """Paired expected/actual bars per value."""
    left, right, top, bottom = 60, 20, 40, 70
    plot_w, plot_h = width - left - right, height - top - bottom
    peak = max(max(a.expected), max(a.actual), 1)
    slot = plot_w / a.n_values
    bar = slot * 0.38
    y0 = top + plot_h

    def h(v: float) -> float:
        return plot_h * v / peak

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">'
        f"{escape(a.attribute)} ({_DIST_LABEL.get(a.distribution.kind, a.distribution.kind)})</text>",
        f'<line x1="{left}" y1="{y0}" x2="{left + plot_w}" y2="{y0}" stroke="#000000"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{y0}" stroke="#000000"/>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end" font-family="sans-serif" font-size="11">{peak:g}</text>',
        f'<text x="{left - 6}" y="{y0 + 4}" text-anchor="end" font-family="sans-serif" font-size="11">0</text>',
    ]
    for k, (value, e, act) in enumerate(zip(a.values, a.expected, a.actual)):
        x = left + k * slot + slot * 0.12
        parts.append(
            f'<rect class="expected" x="{x:.2f}" y="{y0 - h(e):.2f}" width="{bar:.2f}" height="{h(e):.2f}" '
            f'fill="#9ecae1"><title>expected {_fmt(e)}</title></rect>'
        )
        parts.append(
            f'<rect class="actual" x="{x + bar:.2f}" y="{y0 - h(act):.2f}" width="{bar:.2f}" height="{h(act):.2f}" '
            f'fill="#3182bd"><title>actual {act}</title></rect>'
        )
        parts.append(
            f'<text x="{x + bar:.2f}" y="{y0 + 16}" text-anchor="middle" font-family="sans-serif" font-size="10">'
            f"{escape(value)}</text>"
        )
    ly = height - 22
    parts += [
        f'<rect x="{left}" y="{ly - 10}" width="12" height="12" fill="#9ecae1"/>',
        f'<text x="{left + 16}" y="{ly}" font-family="sans-serif" font-size="12">Expected</text>',
        f'<rect x="{left + 90}" y="{ly - 10}" width="12" height="12" fill="#3182bd"/>',
        f'<text x="{left + 106}" y="{ly}" font-family="sans-serif" font-size="12">Actual</text>',
        f'<text x="{width - right}" y="{ly}" text-anchor="end" font-family="sans-serif" font-size="12">'
        f"eps={a.epsilon:.4f} ({a.mean_percent_error:.2f}% per value)</text>",
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def render_attestation(report: AttestationReport) -> dict[str, bytes]:
    """Files keyed by archive-relative name: one SVG per attribute, counts.csv, summary.json."""
    files: dict[str, bytes] = {}
    for a in report.attributes:
        files[f"attestation/{a.attribute}.svg"] = attribute_svg(a).encode("utf-8")
    files["attestation/counts.csv"] = counts_csv(report).encode("utf-8")
    files["attestation/summary.json"] = (json.dumps(report.summary(), indent=2) + "\n").encode("utf-8")
    return files
