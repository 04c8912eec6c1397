"""Output files and the deterministic zip archive.

Archive layout (member order is fixed)::

    input.json, output.json, ACM.txt, access_data.txt, attestation/*, manifest.json

``ACM.txt``: a header ``# subjects=<n_s> objects=<n_o> environments=<n_e>``
(followed by `` sampled=<k>`` when tuples were sampled), then one
``S_i<TAB>O_j<TAB>E_k<TAB>d`` line per tuple in lexicographic order.

``access_data.txt``: CSV with header ``SA_1,..,OA_1,..,EA_1,..,decision`` and
one row per tuple, in the same order as ``ACM.txt``.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import IO, Any, Callable, Iterable, Iterator

import numpy as np

from .generator import AbacDataset
from .policy import Policy, render_rule

DEFAULT_MAX_ACM_TUPLES = 10**7
ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
OUTPUT_KEYS = ("S", "O", "E", "SA", "OA", "EA", "SAV", "OAV", "EAV", "SV", "OV", "EV", "permit_rules", "deny_rules")


def write_output_json(dataset: AbacDataset, policy: Policy) -> dict[str, Any]:
    """The complete generated system as an ``output.json`` document."""
    doc: dict[str, Any] = {}
    for key in OUTPUT_KEYS[:12]:
        doc[key] = getattr(dataset, key)
    doc["permit_rules"] = [render_rule(r) for r in policy.permit]
    doc["deny_rules"] = [render_rule(r) for r in policy.deny]
    return doc


def dumps_json(doc: Any) -> bytes:
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


# -- decision streams ------------------------------------------------------------

@dataclass(frozen=True)
class Decisions:
    """An ordered stream of decisions, either the full matrix or a sample.

    ``chunks()`` yields ``(linear_indices, decisions)`` pairs in ascending
    tuple order, where ``linear = (s * n_o + o) * n_e + e``.
    """

    dims: tuple[int, int, int]
    chunks: Callable[[], Iterator[tuple[np.ndarray, np.ndarray]]]
    sampled: int | None = None

    @property
    def count(self) -> int:
        if self.sampled is not None:
            return self.sampled
        return self.dims[0] * self.dims[1] * self.dims[2]


def full_decisions(index) -> Decisions:
    from .policy import iter_acm_blocks

    _, n_o, n_e = index.dims

    def chunks():
        for s0, block in iter_acm_blocks(index):
            start = s0 * n_o * n_e
            yield np.arange(start, start + block.size, dtype=np.int64), block.reshape(-1)

    return Decisions(index.dims, chunks)


def sampled_decisions(index, linear: np.ndarray, chunk: int = 1 << 18) -> Decisions:
    from .policy import evaluate_tuples

    def chunks():
        for i in range(0, linear.size, chunk):
            part = linear[i : i + chunk]
            yield part, evaluate_tuples(index, part)

    return Decisions(index.dims, chunks, sampled=int(linear.size))


def _split(linear: np.ndarray, dims: tuple[int, int, int]):
    _, n_o, n_e = dims
    s, rem = np.divmod(linear, n_o * n_e)
    o, e = np.divmod(rem, n_e)
    return s, o, e


def acm_header(decisions: Decisions) -> str:
    n_s, n_o, n_e = decisions.dims
    header = f"# subjects={n_s} objects={n_o} environments={n_e}"
    if decisions.sampled is not None:
        header += f" sampled={decisions.sampled}"
    return header + "\n"


def write_acm(decisions: Decisions, dataset: AbacDataset, out: IO[str]) -> int:
    """Write ``ACM.txt`` to ``out``; returns the number of data lines."""
    s_names = [f"{x}\t" for x in dataset.subject.entities]
    o_names = [f"{x}\t" for x in dataset.object.entities]
    e_names = [f"{x}\t" for x in dataset.environment.entities]
    out.write(acm_header(decisions))
    lines = 0
    for linear, d in decisions.chunks():
        s, o, e = _split(linear, decisions.dims)
        out.write("".join(
            f"{s_names[a]}{o_names[b]}{e_names[c]}{v}\n"
            for a, b, c, v in zip(s.tolist(), o.tolist(), e.tolist(), d.tolist())
        ))
        lines += linear.size
    return lines


def _row_prefixes(group, integer_codes: bool) -> list[str]:
    if not group.attributes:
        return [""] * group.size
    if integer_codes:
        return [",".join(str(c + 1) for c in row) + "," for row in group.codes.tolist()]
    return [",".join(values) + "," for values in group.assignments().values()]


def write_access_data(decisions: Decisions, dataset: AbacDataset, out: IO[str], *, integer_codes: bool = False) -> int:
    """Write ``access_data.txt``; with ``integer_codes`` cells are 1-based value indices."""
    header = [a for g in dataset.groups for a in g.attributes] + ["decision"]
    out.write(",".join(header) + "\n")
    sp, op, ep = (_row_prefixes(g, integer_codes) for g in dataset.groups)
    rows = 0
    for linear, d in decisions.chunks():
        s, o, e = _split(linear, decisions.dims)
        out.write("".join(
            f"{sp[a]}{op[b]}{ep[c]}{v}\n"
            for a, b, c, v in zip(s.tolist(), o.tolist(), e.tolist(), d.tolist())
        ))
        rows += linear.size
    return rows


# -- archive --------------------------------------------------------------------

Writer = Callable[[IO[str]], Any]


@dataclass
class Member:
    name: str
    data: bytes | None = None
    writer: Writer | None = None


@dataclass
class OutputBundle:
    members: list[Member] = field(default_factory=list)
    manifest_extra: dict[str, Any] = field(default_factory=dict)

    def add(self, name: str, data: bytes) -> None:
        self.members.append(Member(name, data=data))

    def add_stream(self, name: str, writer: Writer) -> None:
        self.members.append(Member(name, writer=writer))


_ORDER = {"input.json": 0, "output.json": 1, "ACM.txt": 2, "access_data.txt": 3}


def _member_rank(name: str) -> tuple[int, str]:
    if name in _ORDER:
        return (_ORDER[name], name)
    if name.startswith("attestation/"):
        return (4, name)
    return (5, name)


class _HashingWriter(io.RawIOBase):
    def __init__(self, target: IO[bytes]):
        self.target = target
        self.sha = hashlib.sha256()
        self.size = 0

    def writable(self) -> bool:
        return True

    def write(self, b) -> int:
        self.sha.update(b)
        self.size += len(b)
        self.target.write(b)
        return len(b)


def _zipinfo(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    info.create_system = 3
    return info


def package_zip(bundle: OutputBundle, target: IO[bytes] | None = None) -> bytes | None:
    """Write the archive. Returns its bytes when no ``target`` is given."""
    sink = target if target is not None else io.BytesIO()
    entries = []
    with zipfile.ZipFile(sink, "w", compression=zipfile.ZIP_DEFLATED, compresslevel=6) as zf:
        for member in sorted(bundle.members, key=lambda m: _member_rank(m.name)):
            with zf.open(_zipinfo(member.name), "w") as raw:
                hashing = _HashingWriter(raw)
                if member.data is not None:
                    hashing.write(member.data)
                else:
                    text = io.TextIOWrapper(io.BufferedWriter(hashing, 1 << 20), encoding="utf-8", newline="\n")
                    member.writer(text)
                    text.flush()
                    text.detach().flush()
            entries.append({"name": member.name, "size": hashing.size, "sha256": hashing.sha.hexdigest()})
        manifest = dict(bundle.manifest_extra)
        manifest["files"] = entries
        zf.writestr(_zipinfo("manifest.json"), dumps_json(manifest))
    if target is None:
        return sink.getvalue()
    return None


def read_archive(data: bytes | IO[bytes]) -> dict[str, bytes]:
    source = io.BytesIO(data) if isinstance(data, (bytes, bytearray)) else data
    with zipfile.ZipFile(source) as zf:
        return {name: zf.read(name) for name in zf.namelist()}


def iter_acm_lines(text: str) -> Iterable[tuple[str, str, str, int]]:
    for line in text.splitlines()[1:]:
        s, o, e, d = line.split("\t")
        yield s, o, e, int(d)
