"""Permit/deny rule generation and access-control-matrix evaluation.

Rules are full conjunctions: one ``attribute=value`` condition for every
subject, object and environment attribute. A tuple ``(s, o, e)`` is granted
iff some permit rule matches it and no deny rule does (deny overrides).

Evaluation goes through :class:`EntityMatchIndex`, which stores for every
rule the bitset of subjects, objects and environments satisfying that rule's
conditions on their own attributes. A rule matches ``(s, o, e)`` exactly when
all three memberships hold.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import RuleSpaceExhausted, RuleSyntaxError, UnknownAttribute, ValueNotInDomain
from .generator import AbacDataset
from .sampling import RngStream
from .spec_model import GROUPS, GenerationSpec

RULE_STREAM = "rules"
RESAMPLE_FACTOR = 10


class Effect(str, Enum):
    PERMIT = "permit"
    DENY = "deny"


@dataclass(frozen=True)
class Rule:
    conditions: tuple[tuple[str, str], ...]
    effect: Effect = Effect.PERMIT

    def render(self) -> str:
        return render_rule(self)


@dataclass(frozen=True)
class Policy:
    permit: tuple[Rule, ...]
    deny: tuple[Rule, ...]

    @property
    def rules(self) -> tuple[Rule, ...]:
        return self.permit + self.deny


class AcmDecision(NamedTuple):
    subject: int
    object: int
    environment: int
    decision: int


# -- text form ----------------------------------------------------------------

_COND = re.compile(r"^\s*([^=\s,]+)\s*=\s*([^=\s,]+)\s*$")


def render_rule(rule: Rule) -> str:
    return ", ".join(f"{a}={v}" for a, v in rule.conditions)


def parse_rule(text: str, dataset: AbacDataset, effect: Effect = Effect.PERMIT) -> Rule:
    """Parse ``"SA_1=SA_1_2, SA_2=SA_2_4, ..."`` against ``dataset``'s vocabulary.

    The rule must name every attribute exactly once, in subject, object,
    environment attribute order.
    """
    if not isinstance(text, str):
        raise RuleSyntaxError(f"rule must be a string, got {type(text).__name__}")
    expected = [a for g in dataset.groups for a in g.attributes]
    parts = text.split(",") if text.strip() else []
    conditions = []
    for part in parts:
        m = _COND.match(part)
        if m is None:
            raise RuleSyntaxError(f"cannot parse condition {part.strip()!r} in rule {text!r}")
        attribute, value = m.groups()
        owner = dataset.attribute_owner(attribute)
        if owner is None:
            raise UnknownAttribute(f"unknown attribute {attribute!r} in rule {text!r}")
        group, _ = owner
        if value not in group.value_index[attribute]:
            raise ValueNotInDomain(f"{value!r} is not a value of {attribute}")
        conditions.append((attribute, value))
    names = [a for a, _ in conditions]
    if names != expected:
        raise RuleSyntaxError(f"rule must list attributes {expected} in order, got {names}")
    return Rule(tuple(conditions), effect)


# -- generation -----------------------------------------------------------------

def rule_space_size(dataset: AbacDataset) -> int:
    return math.prod(c for g in dataset.groups for c in g.cardinalities)


def generate_rules(dataset: AbacDataset, spec: GenerationSpec, master_seed: int) -> Policy:
    """Draw distinct full-conjunction rules, each value uniform over its domain.

    Permit rules are drawn first, then deny rules, from one stream. A collision
    with any earlier rule is resampled; after ``10 x requested`` collisions the
    spec is declared over-constrained.
    """
    requested = spec.permit_rules_count + spec.deny_rules_count
    cards = np.array([c for g in dataset.groups for c in g.cardinalities], dtype=np.int64)
    attributes = [(g, a) for g in dataset.groups for a in g.attributes]
    space = rule_space_size(dataset)
    if requested > space:
        raise RuleSpaceExhausted(f"{requested} distinct rules requested but only {space} exist")

    rng = RngStream(master_seed, RULE_STREAM)
    budget = RESAMPLE_FACTOR * requested
    seen: set[tuple[int, ...]] = set()
    drawn: list[tuple[int, ...]] = []
    while len(drawn) < requested:
        codes = tuple(np.minimum((rng.random(len(cards)) * cards).astype(np.int64), cards - 1).tolist())
        if codes in seen:
            budget -= 1
            if budget < 0:
                raise RuleSpaceExhausted(
                    f"could not draw {requested} distinct rules from a space of {space} "
                    f"within {RESAMPLE_FACTOR * requested} resamples"
                )
            continue
        seen.add(codes)
        drawn.append(codes)

    def to_rule(codes: tuple[int, ...], effect: Effect) -> Rule:
        return Rule(tuple((a, g.values[a][c]) for (g, a), c in zip(attributes, codes)), effect)

    n_permit = spec.permit_rules_count
    return Policy(
        permit=tuple(to_rule(c, Effect.PERMIT) for c in drawn[:n_permit]),
        deny=tuple(to_rule(c, Effect.DENY) for c in drawn[n_permit:]),
    )


def policy_from_strings(permit: Sequence[str], deny: Sequence[str], dataset: AbacDataset) -> Policy:
    return Policy(
        permit=tuple(parse_rule(t, dataset, Effect.PERMIT) for t in permit),
        deny=tuple(parse_rule(t, dataset, Effect.DENY) for t in deny),
    )


# -- match index ---------------------------------------------------------------

def _rule_codes(rules: Sequence[Rule], dataset: AbacDataset, kind: str) -> np.ndarray:
    group = dataset.group(kind)
    out = np.full((len(rules), len(group.attributes)), -1, dtype=np.int32)
    for r, rule in enumerate(rules):
        cond = dict(rule.conditions)
        for j, a in enumerate(group.attributes):
            if a in cond:
                out[r, j] = group.value_index[a].get(cond[a], -1)
    return out


@dataclass(frozen=True, eq=False)
class EntityMatchIndex:
    """Per-rule entity bitsets, plus their entity-major transposes.

    ``rule_bits[kind]`` has shape ``(n_rules, words(n_entities))``: row ``r``
    is the set of entities of that kind satisfying rule ``r``'s conditions.
    Rules are numbered permit first, then deny.

    ``permit_bits[kind]`` / ``deny_bits[kind]`` have shape
    ``(n_entities, words(n_rules_of_effect))``: row ``i`` is the set of
    permit (deny) rules whose conditions entity ``i`` satisfies.
    """

    dims: tuple[int, int, int]
    n_permit: int
    n_deny: int
    rule_bits: dict[str, np.ndarray]
    permit_bits: dict[str, np.ndarray]
    deny_bits: dict[str, np.ndarray]

    def members(self, rule: int, kind: str) -> np.ndarray:
        n = self.dims[GROUPS.index(kind)]
        return np.flatnonzero(kernels.unpack_rows(self.rule_bits[kind][rule : rule + 1], n)[0])

    def contains(self, rule: int, kind: str, entity: int) -> bool:
        word = int(self.rule_bits[kind][rule, entity // 64])
        return bool((word >> (entity % 64)) & 1)

    def _arrays(self):
        return (
            self.permit_bits["subject"], self.deny_bits["subject"],
            self.permit_bits["object"], self.deny_bits["object"],
            self.permit_bits["environment"], self.deny_bits["environment"],
        )


def build_match_index(dataset: AbacDataset, policy: Policy) -> EntityMatchIndex:
    rules = policy.rules
    n_permit = len(policy.permit)
    rule_bits, permit_bits, deny_bits = {}, {}, {}
    for kind in GROUPS:
        group = dataset.group(kind)
        mask = kernels.match_rows(group.codes, _rule_codes(rules, dataset, kind))
        rule_bits[kind] = kernels.pack_rows(mask)
        permit_bits[kind] = kernels.pack_rows(np.ascontiguousarray(mask[:n_permit].T))
        deny_bits[kind] = kernels.pack_rows(np.ascontiguousarray(mask[n_permit:].T))
    return EntityMatchIndex(dataset.dims, n_permit, len(rules) - n_permit, rule_bits, permit_bits, deny_bits)


# -- evaluation ----------------------------------------------------------------

def _block_size(dims: tuple[int, int, int], target: int = 1 << 20) -> int:
    return max(1, target // max(1, dims[1] * dims[2]))


def iter_acm_blocks(index: EntityMatchIndex, block_subjects: int | None = None) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(first_subject, decisions[k, n_o, n_e])`` in subject order."""
    n_s = index.dims[0]
    step = block_subjects or _block_size(index.dims)
    arrays = index._arrays()
    for s0 in range(0, n_s, step):
        s1 = min(n_s, s0 + step)
        yield s0, kernels.acm_block(*arrays, s0, s1)


def evaluate_acm(index: EntityMatchIndex, policy: Policy | None = None, dims=None) -> Iterator[AcmDecision]:
    """Stream every decision over S x O x E in lexicographic ``(s, o, e)`` order."""
    for s0, block in iter_acm_blocks(index):
        for ds, plane in enumerate(block):
            for o, row in enumerate(plane.tolist()):
                for e, d in enumerate(row):
                    yield AcmDecision(s0 + ds, o, e, d)


def acm_matrix(index: EntityMatchIndex) -> np.ndarray:
    n_s, n_o, n_e = index.dims
    out = np.empty((n_s, n_o, n_e), dtype=np.uint8)
    for s0, block in iter_acm_blocks(index):
        out[s0 : s0 + block.shape[0]] = block
    return out


def evaluate_tuples(index: EntityMatchIndex, linear: np.ndarray) -> np.ndarray:
    """Decisions for the tuples with the given lexicographic linear indices."""
    _, n_o, n_e = index.dims
    linear = np.asarray(linear, dtype=np.int64)
    si, rem = np.divmod(linear, n_o * n_e)
    oi, ei = np.divmod(rem, n_e)
    return kernels.acm_tuples(*index._arrays(), si, oi, ei)


def sample_tuple_indices(dims: tuple[int, int, int], k: int, master_seed: int) -> np.ndarray:
    """``k`` distinct tuple indices, uniform without replacement, sorted."""
    total = dims[0] * dims[1] * dims[2]
    k = min(k, total)
    rng = RngStream(master_seed, "acm_sample")
    return np.sort(rng.generator.choice(total, size=k, replace=False, shuffle=False))


def _resolve(dataset: AbacDataset, kind: str, entity: int | str) -> int:
    if isinstance(entity, str):
        return dataset.group(kind).entity_index[entity]
    return entity


def rule_matches_naive(dataset: AbacDataset, rule: Rule, s: int, o: int, e: int) -> bool:
    held: dict[str, str] = {}
    for kind, idx in zip(GROUPS, (s, o, e)):
        group = dataset.group(kind)
        held.update(zip(group.attributes, group.row(idx)))
    return all(held.get(a) == v for a, v in rule.conditions)


def evaluate_tuple_naive(dataset: AbacDataset, policy: Policy, s: int | str, o: int | str, e: int | str) -> int:
    """Direct transcription of the decision rule; the oracle for :func:`evaluate_acm`."""
    s, o, e = (_resolve(dataset, k, x) for k, x in zip(GROUPS, (s, o, e)))
    permitted = any(rule_matches_naive(dataset, r, s, o, e) for r in policy.permit)
    denied = any(rule_matches_naive(dataset, r, s, o, e) for r in policy.deny)
    return int(permitted and not denied)
