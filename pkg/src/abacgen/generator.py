"""Entity, attribute and value generation, and attribute-value assignment."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import DatasetError, SamplingError
from .sampling import RngStream, sample_indices
from .spec_model import GROUPS, GenerationSpec

ENTITY_PREFIX = {"subject": "S", "object": "O", "environment": "E"}
ATTRIBUTE_PREFIX = {"subject": "SA", "object": "OA", "environment": "EA"}


@dataclass(frozen=True, eq=False)
class EntityGroup:
    """Entities of one kind with their attributes and assigned values.

    ``codes[i, j]`` is the 0-based index of the value of attribute ``j`` held by
    entity ``i`` within ``values[attributes[j]]``; ``None`` until assigned.
    """

    kind: str
    entities: tuple[str, ...]
    attributes: tuple[str, ...]
    values: Mapping[str, tuple[str, ...]]
    codes: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.entities)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(len(self.values[a]) for a in self.attributes)

    @cached_property
    def value_index(self) -> dict[str, dict[str, int]]:
        return {a: {v: i for i, v in enumerate(self.values[a])} for a in self.attributes}

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {e: i for i, e in enumerate(self.entities)}

    def assignments(self) -> dict[str, list[str]]:
        """Entity name -> assigned value names in attribute order."""
        if self.codes is None:
            return {e: [] for e in self.entities}
        columns = [np.asarray(self.values[a], dtype=object)[self.codes[:, j]] for j, a in enumerate(self.attributes)]
        if not columns:
            return {e: [] for e in self.entities}
        rows = np.stack(columns, axis=1).tolist()
        return dict(zip(self.entities, rows))

    def row(self, entity: int) -> list[str]:
        return [self.values[a][self.codes[entity, j]] for j, a in enumerate(self.attributes)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EntityGroup):
            return NotImplemented
        same_codes = (self.codes is None and other.codes is None) or (
            self.codes is not None and other.codes is not None and np.array_equal(self.codes, other.codes)
        )
        return (
            self.kind == other.kind
            and self.entities == other.entities
            and self.attributes == other.attributes
            and dict(self.values) == dict(other.values)
            and same_codes
        )


@dataclass(frozen=True, eq=True)
class AbacDataset:
    subject: EntityGroup
    object: EntityGroup
    environment: EntityGroup
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def group(self, kind: str) -> EntityGroup:
        return getattr(self, kind)

    @property
    def groups(self) -> tuple[EntityGroup, EntityGroup, EntityGroup]:
        return (self.subject, self.object, self.environment)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.subject.size, self.object.size, self.environment.size)

    @property
    def assigned(self) -> bool:
        return all(g.codes is not None for g in self.groups)

    # Names used in output.json
    S = property(lambda self: list(self.subject.entities))
    O = property(lambda self: list(self.object.entities))
    E = property(lambda self: list(self.environment.entities))
    SA = property(lambda self: list(self.subject.attributes))
    OA = property(lambda self: list(self.object.attributes))
    EA = property(lambda self: list(self.environment.attributes))
    SAV = property(lambda self: {a: list(v) for a, v in self.subject.values.items()})
    OAV = property(lambda self: {a: list(v) for a, v in self.object.values.items()})
    EAV = property(lambda self: {a: list(v) for a, v in self.environment.values.items()})

    def _assignments(self, kind: str) -> dict[str, list[str]]:
        if kind not in self._cache:
            self._cache[kind] = self.group(kind).assignments()
        return self._cache[kind]

    SV = property(lambda self: self._assignments("subject"))
    OV = property(lambda self: self._assignments("object"))
    EV = property(lambda self: self._assignments("environment"))

    def attribute_owner(self, attribute: str) -> tuple[EntityGroup, int] | None:
        for g in self.groups:
            if attribute in g.value_index:
                return g, g.attributes.index(attribute)
        return None


def _names_for(spec: GenerationSpec, kind: str) -> EntityGroup:
    ep, ap = ENTITY_PREFIX[kind], ATTRIBUTE_PREFIX[kind]
    entities = tuple(f"{ep}_{i}" for i in range(1, spec.size(kind) + 1))
    cards = spec.cardinalities(kind)
    attributes = tuple(f"{ap}_{i}" for i in range(1, len(cards) + 1))
    values = {a: tuple(f"{a}_{j}" for j in range(1, c + 1)) for a, c in zip(attributes, cards)}
    return EntityGroup(kind, entities, attributes, values)


def generate_names(spec: GenerationSpec) -> AbacDataset:
    """Entity identifiers, attribute names and value sets; no assignments yet."""
    return AbacDataset(*(_names_for(spec, kind) for kind in GROUPS))


def sample_attribute_column(group: EntityGroup, j: int, dist, master_seed: int) -> np.ndarray:
    """0-based value codes for attribute ``j`` of every entity, entity-ascending."""
    attribute = group.attributes[j]
    n = len(group.values[attribute])
    try:
        idx = sample_indices(dist, n, RngStream(master_seed, attribute), group.size)
    except SamplingError as exc:
        raise exc.for_attribute(attribute) from None
    return (idx - 1).astype(np.int32)


def assign_attribute_values(dataset: AbacDataset, spec: GenerationSpec, master_seed: int) -> AbacDataset:
    """Draw one value per entity per attribute from the attribute's distribution.

    Each attribute uses its own stream (``stream_id`` = attribute name); values
    are drawn into a column in entity order and stacked into the code matrix.
    """
    groups = []
    for kind in GROUPS:
        group = dataset.group(kind)
        dists = spec.distributions(kind)
        columns = [sample_attribute_column(group, j, dists[j], master_seed) for j in range(len(group.attributes))]
        if columns:
            codes = np.ascontiguousarray(np.stack(columns, axis=1))
        else:
            codes = np.zeros((group.size, 0), dtype=np.int32)
        groups.append(replace(group, codes=codes))
    return AbacDataset(*groups)


def generate_dataset(spec: GenerationSpec, master_seed: int) -> AbacDataset:
    return assign_attribute_values(generate_names(spec), spec, master_seed)


# -- validation and reconstruction -----------------------------------------

def validate_dataset(dataset: AbacDataset, spec: GenerationSpec | None = None) -> list[str]:
    """Walk every map and report broken invariants as messages."""
    problems: list[str] = []
    for g in dataset.groups:
        if spec is not None:
            if g.size != spec.size(g.kind):
                problems.append(f"{g.kind}: {g.size} entities, spec asks for {spec.size(g.kind)}")
            if g.cardinalities != tuple(spec.cardinalities(g.kind)):
                problems.append(f"{g.kind}: value cardinalities {list(g.cardinalities)} differ from spec")
        if g.codes is None:
            problems.append(f"{g.kind}: values not assigned")
            continue
        if g.codes.shape != (g.size, len(g.attributes)):
            problems.append(f"{g.kind}: assignment shape {g.codes.shape} is wrong")
            continue
        for j, a in enumerate(g.attributes):
            col = g.codes[:, j]
            if col.size and (col.min() < 0 or col.max() >= len(g.values[a])):
                problems.append(f"{g.kind}: attribute {a} holds a value outside its domain")
    return problems


def _group_from_document(doc: Mapping[str, Any], kind: str) -> EntityGroup:
    ek, ak = ENTITY_PREFIX[kind], ATTRIBUTE_PREFIX[kind]
    try:
        entities = tuple(doc[ek])
        attributes = tuple(doc[ak])
        values = {a: tuple(doc[f"{ak}V"][a]) for a in attributes}
        rows = doc[f"{ek}V"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"output document is missing {exc}") from None
    group = EntityGroup(kind, entities, attributes, values)
    index = group.value_index
    codes = np.zeros((len(entities), len(attributes)), dtype=np.int32)
    if set(rows) != set(entities):
        raise DatasetError(f"{ek}V keys do not match the {ek} entity list")
    for i, e in enumerate(entities):
        row = rows[e]
        if len(row) != len(attributes):
            raise DatasetError(f"{ek}V[{e}] has {len(row)} values for {len(attributes)} attributes")
        for j, (a, v) in enumerate(zip(attributes, row)):
            code = index[a].get(v)
            if code is None:
                raise DatasetError(f"{ek}V[{e}][{j}]={v!r} is not a value of {a}")
            codes[i, j] = code
    return replace(group, codes=codes)


def dataset_from_document(doc: Mapping[str, Any]) -> AbacDataset:
    """Rebuild a dataset from a decoded ``output.json`` document."""
    return AbacDataset(*(_group_from_document(doc, kind) for kind in GROUPS))
