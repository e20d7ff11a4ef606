"""Attributed directed graphs carrying a finite cellular sheaf.

Stalks are finite label sets and restriction maps are lookup tables, so every
sheaf here has a finite space of global sections that can be enumerated.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ShapeMismatchError

NodeId = str
EdgeId = str


@dataclass(frozen=True)
class Edge:
    id: EdgeId
    source: NodeId
    target: NodeId


@dataclass(frozen=True)
class AttributedGraph:
    """Directed multigraph with attribute records on nodes and edges.

    Self-loops and parallel edges are allowed. Iteration order is insertion
    order and every derived structure follows it.
    """

    nodes: tuple[NodeId, ...]
    edges: tuple[Edge, ...]
    node_attrs: Mapping[NodeId, Mapping[str, Any]] = field(default_factory=dict)
    edge_attrs: Mapping[EdgeId, Mapping[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        edges = tuple(e if isinstance(e, Edge) else Edge(*e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "node_attrs", dict(self.node_attrs))
        object.__setattr__(self, "edge_attrs", dict(self.edge_attrs))

    @cached_property
    def node_index(self) -> dict[NodeId, int]:
        return {v: i for i, v in enumerate(self.nodes)}

    @cached_property
    def edge_index(self) -> dict[EdgeId, int]:
        return {e.id: i for i, e in enumerate(self.edges)}

    @cached_property
    def edge_by_id(self) -> dict[EdgeId, Edge]:
        return {e.id: e for e in self.edges}

    @cached_property
    def _incoming(self) -> dict[NodeId, tuple[EdgeId, ...]]:
        acc: dict[NodeId, list[EdgeId]] = {v: [] for v in self.nodes}
        for e in self.edges:
            if e.target in acc:
                acc[e.target].append(e.id)
        return {v: tuple(ids) for v, ids in acc.items()}

    def incoming(self, node: NodeId) -> tuple[EdgeId, ...]:
        """Ids of edges whose target is ``node``, in edge order."""
        return self._incoming[node]

    def neighbors(self, node: NodeId) -> set[NodeId]:
        """Undirected neighbourhood (self excluded)."""
        out = set()
        for e in self.edges:
            if e.source == node:
                out.add(e.target)
            if e.target == node:
                out.add(e.source)
        out.discard(node)
        return out

    def is_connected(self, nodes: Iterable[NodeId]) -> bool:
        """Whether ``nodes`` induce a weakly connected subgraph."""
        members = set(nodes)
        if not members:
            return False
        adj: dict[NodeId, set[NodeId]] = {v: set() for v in members}
        for e in self.edges:
            if e.source in members and e.target in members:
                adj[e.source].add(e.target)
                adj[e.target].add(e.source)
        start = next(iter(members))
        seen = {start}
        frontier = [start]
        while frontier:
            v = frontier.pop()
            for w in adj[v] - seen:
                seen.add(w)
                frontier.append(w)
        return seen == members


@dataclass(frozen=True)
class StateSpace:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        if not labels:
            raise ValueError("a state space needs at least one label")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate state labels in {labels!r}")
        object.__setattr__(self, "labels", labels)

    @property
    def cardinality(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    def index(self, label) -> int:
        return self.labels.index(str(label))

    @classmethod
    def of_size(cls, n: int) -> "StateSpace":
        return cls(tuple(str(i) for i in range(n)))


@dataclass(frozen=True)
class RestrictionMap:
    """Total function from a node stalk to an edge stalk, stored as a table."""

    domain: StateSpace
    codomain: StateSpace
    table: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "table", tuple(int(x) for x in self.table))

    def __call__(self, state: int) -> int:
        return self.table[state]

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.table, dtype=np.int64)

    @classmethod
    def identity(cls, space: StateSpace) -> "RestrictionMap":
        return cls(space, space, tuple(range(space.cardinality)))

    @classmethod
    def from_function(cls, domain: StateSpace, codomain: StateSpace, fn) -> "RestrictionMap":
        return cls(domain, codomain, tuple(fn(i) for i in range(domain.cardinality)))


@dataclass(frozen=True)
class Sheaf:
    graph: AttributedGraph
    node_stalks: Mapping[NodeId, StateSpace]
    edge_stalks: Mapping[EdgeId, StateSpace]
    tail_maps: Mapping[EdgeId, RestrictionMap]
    head_maps: Mapping[EdgeId, RestrictionMap]

    def __post_init__(self):
        for name in ("node_stalks", "edge_stalks", "tail_maps", "head_maps"):
            object.__setattr__(self, name, dict(getattr(self, name)))

    @property
    def nodes(self) -> tuple[NodeId, ...]:
        return self.graph.nodes

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self.graph.edges

    def node_card(self, node: NodeId) -> int:
        return self.node_stalks[node].cardinality

    def edge_card(self, edge: EdgeId) -> int:
        return self.edge_stalks[edge].cardinality

    @cached_property
    def edge_sources(self) -> np.ndarray:
        idx = self.graph.node_index
        return np.asarray([idx[e.source] for e in self.edges], dtype=np.int64)

    @cached_property
    def edge_targets(self) -> np.ndarray:
        idx = self.graph.node_index
        return np.asarray([idx[e.target] for e in self.edges], dtype=np.int64)

    @cached_property
    def incoming_index(self) -> tuple[tuple[int, ...], ...]:
        eidx = self.graph.edge_index
        return tuple(tuple(eidx[e] for e in self.graph.incoming(v)) for v in self.nodes)

    def tail_force(self, node_states: np.ndarray) -> np.ndarray:
        """Edge states implied by tail maps, for a batch of node-state rows."""
        node_states = np.asarray(node_states, dtype=np.int64)
        out = np.empty(node_states.shape[:-1] + (len(self.edges),), dtype=np.int64)
        for k, e in enumerate(self.edges):
            out[..., k] = self.tail_maps[e.id].array[node_states[..., self.edge_sources[k]]]
        return out

    def section_from_nodes(self, node_states: Mapping[NodeId, int] | Sequence[int]) -> "Section":
        """Complete a node assignment to a section by tail-forcing every edge."""
        if isinstance(node_states, Mapping):
            row = [int(node_states[v]) for v in self.nodes]
        else:
            row = [int(x) for x in node_states]
        edges = self.tail_force(np.asarray(row, dtype=np.int64))
        return Section(dict(zip(self.nodes, row)), {e.id: int(s) for e, s in zip(self.edges, edges)})

    @classmethod
    def build(
        cls,
        nodes: Mapping[NodeId, StateSpace | Sequence],
        edges: Sequence[tuple],
        node_attrs=None,
        edge_attrs=None,
    ) -> "Sheaf":
        """Convenience constructor.

        ``edges`` holds ``(id, source, target, stalk, tail_table, head_table)``
        tuples; a ``None`` table means the identity map.
        """
        node_stalks = {v: s if isinstance(s, StateSpace) else StateSpace(tuple(s)) for v, s in nodes.items()}
        graph_edges, edge_stalks, tails, heads = [], {}, {}, {}
        for eid, src, dst, stalk, tail, head in edges:
            space = stalk if isinstance(stalk, StateSpace) else StateSpace(tuple(stalk))
            graph_edges.append(Edge(eid, src, dst))
            edge_stalks[eid] = space
            src_space = node_stalks.get(src, space)
            dst_space = node_stalks.get(dst, space)
            tails[eid] = RestrictionMap(src_space, space, tuple(range(len(space))) if tail is None else tuple(tail))
            heads[eid] = RestrictionMap(dst_space, space, tuple(range(len(space))) if head is None else tuple(head))
        graph = AttributedGraph(tuple(node_stalks), tuple(graph_edges), node_attrs or {}, edge_attrs or {})
        return cls(graph, node_stalks, edge_stalks, tails, heads)


@dataclass(frozen=True)
class Section:
    """Assignment of a state index to every node and edge."""

    node_states: Mapping[NodeId, int]
    edge_states: Mapping[EdgeId, int]

    def __post_init__(self):
        object.__setattr__(self, "node_states", {k: int(v) for k, v in self.node_states.items()})
        object.__setattr__(self, "edge_states", {k: int(v) for k, v in self.edge_states.items()})

    def key(self) -> tuple:
        return (tuple(self.node_states.items()), tuple(self.edge_states.items()))

    def __hash__(self):
        return hash(self.key())

    def node_row(self, sheaf: Sheaf) -> np.ndarray:
        return np.asarray([self.node_states[v] for v in sheaf.nodes], dtype=np.int64)

    def edge_row(self, sheaf: Sheaf) -> np.ndarray:
        return np.asarray([self.edge_states[e.id] for e in sheaf.edges], dtype=np.int64)

    @classmethod
    def from_rows(cls, sheaf: Sheaf, nodes: Sequence[int], edges: Sequence[int]) -> "Section":
        return cls(
            {v: int(s) for v, s in zip(sheaf.nodes, nodes)},
            {e.id: int(s) for e, s in zip(sheaf.edges, edges)},
        )

    def labels(self, sheaf: Sheaf) -> dict[str, dict[str, str]]:
        return {
            "nodes": {v: sheaf.node_stalks[v].labels[s] for v, s in self.node_states.items()},
            "edges": {e: sheaf.edge_stalks[e].labels[s] for e, s in self.edge_states.items()},
        }


@dataclass(frozen=True)
class Violation:
    code: str
    cell: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)

    def add(self, code, cell, message):
        self.violations.append(Violation(code, cell, message))


def validate_sheaf(sheaf: Sheaf) -> ValidationReport:
    """Collect every structural violation; an empty report means the sheaf is well formed."""
    report = ValidationReport()
    graph = sheaf.graph
    if len(set(graph.nodes)) != len(graph.nodes):
        for v in sorted({v for v in graph.nodes if graph.nodes.count(v) > 1}):
            report.add("DUPLICATE_ID", v, f"node id {v!r} is declared more than once")
    edge_ids = [e.id for e in graph.edges]
    for eid in sorted({e for e in edge_ids if edge_ids.count(e) > 1}):
        report.add("DUPLICATE_ID", eid, f"edge id {eid!r} is declared more than once")
    if set(graph.nodes) & set(edge_ids):
        for cid in sorted(set(graph.nodes) & set(edge_ids)):
            report.add("DUPLICATE_ID", cid, f"id {cid!r} names both a node and an edge")

    nodes = set(graph.nodes)
    for v in graph.nodes:
        if v not in sheaf.node_stalks:
            report.add("MISSING_STALK", v, f"node {v!r} has no stalk")
    for v in sheaf.node_stalks:
        if v not in nodes:
            report.add("STALK_MISMATCH", v, f"stalk given for unknown node {v!r}")
    known_edges = set(edge_ids)
    for table_name in ("edge_stalks", "tail_maps", "head_maps"):
        for eid in getattr(sheaf, table_name):
            if eid not in known_edges:
                report.add("STALK_MISMATCH", eid, f"{table_name} entry for unknown edge {eid!r}")

    for e in graph.edges:
        for end, label in ((e.source, "source"), (e.target, "target")):
            if end not in nodes:
                report.add("DANGLING_ENDPOINT", e.id, f"edge {e.id!r} {label} {end!r} is not a node")
        if e.id not in sheaf.edge_stalks:
            report.add("MISSING_STALK", e.id, f"edge {e.id!r} has no stalk")
            continue
        edge_space = sheaf.edge_stalks[e.id]
        for side, end, maps in (("tail", e.source, sheaf.tail_maps), ("head", e.target, sheaf.head_maps)):
            rmap = maps.get(e.id)
            if rmap is None:
                report.add("MISSING_MAP", e.id, f"edge {e.id!r} has no {side} map")
                continue
            node_space = sheaf.node_stalks.get(end)
            if node_space is not None and rmap.domain != node_space:
                report.add("STALK_MISMATCH", e.id, f"{side} map of edge {e.id!r} has the wrong domain")
            if rmap.codomain != edge_space:
                report.add("STALK_MISMATCH", e.id, f"{side} map of edge {e.id!r} has the wrong codomain")
            expected = node_space.cardinality if node_space is not None else rmap.domain.cardinality
            if len(rmap.table) != expected:
                report.add(
                    "NON_TOTAL_MAP",
                    e.id,
                    f"{side} map of edge {e.id!r} has {len(rmap.table)} entries for a {expected}-state stalk",
                )
            for pos, value in enumerate(rmap.table):
                if not 0 <= value < edge_space.cardinality:
                    report.add(
                        "NON_TOTAL_MAP",
                        e.id,
                        f"{side} map of edge {e.id!r} sends state {pos} to {value}, "
                        f"outside the {edge_space.cardinality}-state edge stalk",
                    )
    return report


def check_section(sheaf: Sheaf, section: Section) -> None:
    """Raise ShapeMismatchError unless ``section`` covers exactly the sheaf's cells with valid indices."""
    if set(section.node_states) != set(sheaf.nodes):
        raise ShapeMismatchError("section node set differs from the graph's node set")
    if set(section.edge_states) != {e.id for e in sheaf.edges}:
        raise ShapeMismatchError("section edge set differs from the graph's edge set")
    for v, s in section.node_states.items():
        if not 0 <= s < sheaf.node_card(v):
            raise ShapeMismatchError(f"state {s} of node {v!r} is outside its stalk")
    for e, s in section.edge_states.items():
        if not 0 <= s < sheaf.edge_card(e):
            raise ShapeMismatchError(f"state {s} of edge {e!r} is outside its stalk")


def consistency_residual(sheaf: Sheaf, section: Section, exclude: Iterable[EdgeId] = ()) -> int:
    """Number of (edge, side) pairs whose restriction disagrees with the edge state.

    Edges listed in ``exclude`` are skipped; the dynamics use this to suspend
    constraints on cells held by a failure clamp.
    """
    check_section(sheaf, section)
    skip = set(exclude)
    bad = 0
    for e in sheaf.edges:
        if e.id in skip:
            continue
        value = section.edge_states[e.id]
        if sheaf.tail_maps[e.id](section.node_states[e.source]) != value:
            bad += 1
        if sheaf.head_maps[e.id](section.node_states[e.target]) != value:
            bad += 1
    return bad


def is_global_section(sheaf: Sheaf, section: Section) -> bool:
    return consistency_residual(sheaf, section) == 0


@dataclass
class SectionEnumeration:
    sections: list[Section]
    truncated: bool

    def __iter__(self):
        return iter(self.sections)

    def __len__(self):
        return len(self.sections)

    def __getitem__(self, i):
        return self.sections[i]


def enumerate_global_sections(sheaf: Sheaf, limit: int = 10_000) -> SectionEnumeration:
    """All global sections, lexicographic in node order, truncated at ``limit``.

    Backtracks over node states; an edge is checked as soon as both endpoints
    are assigned, and its state is the tail map's image.
    """
    if limit <= 0:
        raise ValueError("limit must be positive")
    nodes = sheaf.nodes
    index = sheaf.graph.node_index
    closing: list[list[tuple[Edge, RestrictionMap, RestrictionMap]]] = [[] for _ in nodes]
    for e in sheaf.edges:
        closing[max(index[e.source], index[e.target])].append((e, sheaf.tail_maps[e.id], sheaf.head_maps[e.id]))
    cards = [sheaf.node_card(v) for v in nodes]

    found: list[Section] = []
    assignment = [0] * len(nodes)
    truncated = False

    def emit():
        states = dict(zip(nodes, assignment))
        edges = {e.id: sheaf.tail_maps[e.id](states[e.source]) for e in sheaf.edges}
        found.append(Section(states, edges))

    def descend(depth: int) -> bool:
        nonlocal truncated
        if depth == len(nodes):
            if len(found) == limit:
                truncated = True
                return False
            emit()
            return True
        for s in range(cards[depth]):
            assignment[depth] = s
            if all(
                tail(assignment[index[e.source]]) == head(assignment[index[e.target]])
                for e, tail, head in closing[depth]
            ):
                if not descend(depth + 1):
                    return False
        return True

    descend(0)
    return SectionEnumeration(found, truncated)


def induced_subsheaf(sheaf: Sheaf, nodes: Iterable[NodeId]) -> Sheaf:
    """Restriction of the sheaf to ``nodes`` and the edges with both endpoints among them."""
    keep = set(nodes)
    ordered = tuple(v for v in sheaf.nodes if v in keep)
    edges = tuple(e for e in sheaf.edges if e.source in keep and e.target in keep)
    graph = AttributedGraph(
        ordered,
        edges,
        {v: sheaf.graph.node_attrs[v] for v in ordered if v in sheaf.graph.node_attrs},
        {e.id: sheaf.graph.edge_attrs[e.id] for e in edges if e.id in sheaf.graph.edge_attrs},
    )
    return Sheaf(
        graph,
        {v: sheaf.node_stalks[v] for v in ordered},
        {e.id: sheaf.edge_stalks[e.id] for e in edges},
        {e.id: sheaf.tail_maps[e.id] for e in edges},
        {e.id: sheaf.head_maps[e.id] for e in edges},
    )


def product_space(cards: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """Lexicographic enumeration of a product of index ranges."""
    return itertools.product(*(range(c) for c in cards))
