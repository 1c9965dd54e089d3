"""SWC morphology interchange: parsing, validation, writing, subtree selection.

SWC is the 7-column plain-text format used by neuromorpho.org:
``id type x y z radius parent`` with '#' comments.  Parsing is total: any
byte stream yields a (possibly empty) list of trees plus a validation
report; structural problems are collected as violations with line numbers
instead of exceptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .growth import SOMA_PARENT, NeuronTree, SomaSpec

__all__ = [
    "SwcRecord",
    "MorphologyReport",
    "parse_swc",
    "parse_swc_file",
    "write_swc",
    "select_subtree",
]

SOMA_TYPE = 1
# a point this close to the soma surface is an attachment anchor, not a segment
_ANCHOR_TOL = 1e-3


class SwcError(ValueError):
    pass


@dataclass(frozen=True)
class SwcRecord:
    id: int
    type_code: int
    x: float
    y: float
    z: float
    radius: float
    parent: int

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass
class MorphologyReport:
    """Validation outcome; the file is accepted iff ``violations`` is empty."""

    n_records: int = 0
    type_counts: dict[int, int] = field(default_factory=dict)
    n_trees: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, line_no: int | None, message: str):
        where = f"line {line_no}: " if line_no is not None else ""
        self.violations.append(f"{where}{message}")


def _parse_records(text: str, report: MorphologyReport) -> list[SwcRecord]:
    records: list[SwcRecord] = []
    seen: set[int] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split()
        if len(cols) != 7:
            report.add(line_no, f"expected 7 columns, got {len(cols)}")
            continue
        try:
            rid = int(cols[0])
            code = int(cols[1])
            x, y, z, r = (float(c) for c in cols[2:6])
            parent = int(cols[6])
        except ValueError:
            report.add(line_no, "non-numeric field")
            continue
        if not all(math.isfinite(v) for v in (x, y, z, r)):
            report.add(line_no, "non-finite coordinate")
            continue
        if r < 0:
            report.add(line_no, "negative radius")
            continue
        if rid in seen:
            report.add(line_no, f"duplicate id {rid}")
            continue
        if parent != -1 and parent not in seen:
            # also catches self-references and cycles: a legal parent must
            # have been declared on an earlier line
            report.add(line_no, f"forward reference to parent {parent}")
            continue
        seen.add(rid)
        records.append(SwcRecord(rid, code, x, y, z, r, parent))
    return records


def _component_of(records: dict[int, SwcRecord]) -> dict[int, int]:
    """Record id -> id of its topmost ancestor."""
    top: dict[int, int] = {}

    def find(rid: int) -> int:
        chain = []
        cur = rid
        while cur not in top:
            p = records[cur].parent
            if p == -1 or p not in records:
                top[cur] = cur
                break
            chain.append(cur)
            cur = p
        t = top[cur]
        for c in chain:
            top[c] = t
        return t

    for rid in records:
        find(rid)
    return top


def _build_tree(members: list[SwcRecord], records: dict[int, SwcRecord]) -> NeuronTree | None:
    somata = [m for m in members if m.type_code == SOMA_TYPE]
    points = [m for m in members if m.type_code != SOMA_TYPE]
    soma_ids = {m.id for m in somata}
    if somata:
        centroid = np.mean([m.xyz for m in somata], axis=0)
        radius = max(max(m.radius for m in somata), 1e-6)
    elif points:
        centroid = points[0].xyz
        radius = max(points[0].radius, 1e-6)
    else:
        return None

    placeholder = SomaSpec(position=tuple(centroid), radius=radius,
                           neurites=(((0.0, 0.0, 1.0), 0.0),))
    tree = NeuronTree(placeholder)
    # record id -> agent id, or -1 when the record is an attachment anchor
    agent_of: dict[int, int] = {}
    anchor_xyz: dict[int, np.ndarray] = {}

    for m in points:
        p = m.parent
        if p == -1 or p in soma_ids:
            d = float(np.linalg.norm(m.xyz - centroid))
            if p == -1 and not somata:
                agent_of[m.id] = -1
                anchor_xyz[m.id] = m.xyz
            elif d <= radius + _ANCHOR_TOL:
                # on (or inside) the soma: attachment point only
                agent_of[m.id] = -1
                anchor_xyz[m.id] = m.xyz
            else:
                start = centroid + radius * (m.xyz - centroid) / d
                aid = tree.add_agent(SOMA_PARENT, start, m.xyz, resource=0.0,
                                     diameter=2.0 * m.radius, type_code=m.type_code)
                agent_of[m.id] = aid
        else:
            start = anchor_xyz.get(p, None)
            if start is None:
                start = records[p].xyz
            if float(np.linalg.norm(m.xyz - start)) <= 0.0:
                # duplicate consecutive point: chain through it
                agent_of[m.id] = agent_of[p]
                anchor_xyz[m.id] = start
                continue
            parent_agent = agent_of[p]
            aid = tree.add_agent(parent_agent if parent_agent >= 0 else SOMA_PARENT,
                                 start, m.xyz, resource=0.0,
                                 diameter=2.0 * m.radius, type_code=m.type_code)
            agent_of[m.id] = aid

    if tree.n_agents == 0:
        return None  # soma-only (or fully degenerate) component
    neurites = []
    for rid in tree.root_ids():
        d = tree.end[rid] - tree.start[rid]
        neurites.append((tuple(d / np.linalg.norm(d)), 0.0))
    tree.soma = SomaSpec(position=tuple(centroid), radius=radius,
                         neurites=tuple(neurites))
    return tree


def parse_swc(text: str) -> tuple[list[NeuronTree], MorphologyReport]:
    """Parse SWC text into one NeuronTree per connected component.

    Soma records (type 1) of a component collapse into a spherical soma at
    their centroid with the maximum radius.  A point record parented to the
    soma starts a root agent on the soma surface, unless it lies on or
    inside the soma, in which case it is a pure attachment anchor.  Chained
    point records become chained agents.  Soma-only components are dropped.
    Never raises on malformed input: problems become report violations.
    """
    report = MorphologyReport()
    recs = _parse_records(text, report)
    report.n_records = len(recs)
    if not recs:
        report.add(None, "no records")
        return [], report
    records = {m.id: m for m in recs}
    for m in recs:
        report.type_counts[m.type_code] = report.type_counts.get(m.type_code, 0) + 1
    comp_of = _component_of(records)
    comp_ids = sorted({comp_of[r] for r in records})
    trees = []
    for comp in comp_ids:
        members = [records[r] for r in sorted(records) if comp_of[r] == comp]
        tree = _build_tree(members, records)
        if tree is not None:
            trees.append(tree)
    report.n_trees = len(trees)
    return trees, report


def parse_swc_file(path: str | Path) -> tuple[list[NeuronTree], MorphologyReport]:
    text = Path(path).read_text(errors="replace")
    return parse_swc(text)


def write_swc(tree: NeuronTree, type_code: int | None = None) -> str:
    """Serialize one tree: soma record first, then depth-first pre-order.

    Each root agent emits a record for its start point (parented to the
    soma) and one for its end point; non-root agents emit only their end
    point (their start coincides with the mother's end).  Coordinates use
    fixed 4-decimal precision, so a write/parse round trip preserves the
    geometry to 1e-4 μm and the topology exactly.  Output is deterministic.
    """
    lines = ["# generated by arborabc"]
    soma = tree.soma
    px, py, pz = soma.position
    lines.append(f"1 {SOMA_TYPE} {px:.4f} {py:.4f} {pz:.4f} {soma.radius:.4f} -1")
    next_id = 2
    end_record: dict[int, int] = {}
    kids = tree.children_map()

    def code_of(agent: int) -> int:
        return int(tree.type_code[agent]) if type_code is None else int(type_code)

    stack = sorted((int(r) for r in tree.root_ids()), reverse=True)
    order = []
    while stack:
        a = stack.pop()
        order.append(a)
        for child in sorted(kids[a], reverse=True):
            stack.append(child)
    for a in order:
        radius = 0.5 * float(tree.diameter[a])
        if int(tree.parent[a]) == SOMA_PARENT:
            sx, sy, sz = tree.start[a]
            lines.append(
                f"{next_id} {code_of(a)} {sx:.4f} {sy:.4f} {sz:.4f} {radius:.4f} 1"
            )
            parent_id = next_id
            next_id += 1
        else:
            parent_id = end_record[int(tree.parent[a])]
        ex, ey, ez = tree.end[a]
        lines.append(
            f"{next_id} {code_of(a)} {ex:.4f} {ey:.4f} {ez:.4f} {radius:.4f} {parent_id}"
        )
        end_record[a] = next_id
        next_id += 1
    return "\n".join(lines) + "\n"


def select_subtree(tree: NeuronTree, type_codes: Iterable[int]) -> NeuronTree:
    """Restrict a morphology to the requested structure type codes.

    Agents whose type is selected but whose parent is dropped become new
    root agents (the result stays rooted at the same soma).
    """
    wanted = set(int(c) for c in type_codes)
    if not wanted:
        raise SwcError("empty type-code selection")
    keep = [i for i in range(tree.n_agents) if int(tree.type_code[i]) in wanted]
    if not keep:
        raise SwcError(f"no structures with type codes {sorted(wanted)}")
    keep_set = set(keep)
    out = NeuronTree(tree.soma, capacity=len(keep))
    new_id: dict[int, int] = {}
    for i in keep:  # ascending: parents precede daughters
        p = int(tree.parent[i])
        np_ = new_id[p] if p in keep_set else SOMA_PARENT
        new_id[i] = out.add_agent(
            np_, tree.start[i], tree.end[i], float(tree.resource[i]),
            diameter=float(tree.diameter[i]), type_code=int(tree.type_code[i]),
        )
    neurites = []
    for rid in out.root_ids():
        d = out.end[rid] - out.start[rid]
        neurites.append((tuple(d / np.linalg.norm(d)), 0.0))
    out.soma = SomaSpec(position=tree.soma.position, radius=tree.soma.radius,
                        neurites=tuple(neurites))
    return out
