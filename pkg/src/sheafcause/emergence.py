"""Macro-node aggregation, the causal resilience index, and macro-node search.

A block U of nodes collapses into one macro node whose states are the locally
consistent sections over U. Edges leaving or entering U re-attach to the
macro node, and its restriction maps read the boundary node's state out of
the local section. The macro kernel lifts a macro state to its micro section,
runs the micro kernels of U's nodes, and projects every outcome back to the
nearest local section (Hamming distance, ties to the first in enumeration
order).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .causal import EIConfig, EIResult, PairwiseEI, effective_information, pairwise_ei_matrix, parallel_map
from .dynamics import NodeKernel, UpdateRule
from .errors import CapExceededError, EmptyLocalSectionsError, ValidationError
from .model import (
    AttributedGraph,
    Edge,
    NodeId,
    RestrictionMap,
    Section,
    Sheaf,
    StateSpace,
    enumerate_global_sections,
    induced_subsheaf,
    product_space,
)

LOCAL_SECTION_CAP = 1 << 16
SCORE_DIGITS = 12


@dataclass(frozen=True)
class MacroGrouping:
    """A partition of the nodes; blocks of two or more nodes become macro nodes."""

    blocks: tuple[tuple[NodeId, ...], ...]
    names: tuple[NodeId, ...]

    @classmethod
    def from_blocks(
        cls,
        sheaf: Sheaf,
        blocks: Sequence[Sequence[NodeId]],
        names: Mapping[int, NodeId] | Sequence[NodeId | None] | None = None,
    ) -> "MacroGrouping":
        """Complete ``blocks`` with singletons and order everything by node order.

        ``names`` optionally fixes the macro-node id of each given block;
        otherwise a fresh id like ``[a+b]`` is generated.
        """
        order = sheaf.graph.node_index
        given = []
        for k, block in enumerate(blocks):
            missing = [v for v in block if v not in order]
            if missing:
                raise ValidationError(f"grouping references unknown nodes {missing!r}")
            name = None
            if names is not None:
                name = names.get(k) if isinstance(names, Mapping) else names[k]
            given.append((tuple(sorted(set(block), key=order.__getitem__)), name))
        covered = [v for block, _ in given for v in block]
        if len(covered) != len(set(covered)):
            raise ValidationError("grouping blocks overlap")
        rest = [((v,), None) for v in sheaf.nodes if v not in set(covered)]
        all_blocks = sorted(given + rest, key=lambda item: order[item[0][0]])

        taken = set(sheaf.nodes) | {e.id for e in sheaf.edges}
        out_blocks, out_names = [], []
        for block, name in all_blocks:
            if len(block) == 1 and name is None:
                name = block[0]
            elif name is None:
                name = "[" + "+".join(block) + "]"
                while name in taken:
                    name += "'"
            out_blocks.append(block)
            out_names.append(name)
            taken.add(name)
        grouping = cls(tuple(out_blocks), tuple(out_names))
        grouping.validate(sheaf)
        return grouping

    @classmethod
    def singletons(cls, sheaf: Sheaf) -> "MacroGrouping":
        return cls.from_blocks(sheaf, [])

    @property
    def macro_blocks(self) -> tuple[tuple[NodeId, tuple[NodeId, ...]], ...]:
        return tuple((n, b) for n, b in zip(self.names, self.blocks) if len(b) >= 2)

    def validate(self, sheaf: Sheaf) -> None:
        members = [v for b in self.blocks for v in b]
        problems = []
        if sorted(members) != sorted(sheaf.nodes) or len(members) != len(set(members)):
            problems.append("blocks must be disjoint and cover every node exactly once")
        if any(not b for b in self.blocks):
            problems.append("blocks must be non-empty")
        if len(self.names) != len(self.blocks) or len(set(self.names)) != len(self.names):
            problems.append("every block needs a distinct name")
        edge_ids = {e.id for e in sheaf.edges}
        for name, block in zip(self.names, self.blocks):
            if len(block) == 1 and name != block[0]:
                problems.append(f"singleton block {block[0]!r} must keep its node id")
            if len(block) >= 2 and (name in sheaf.graph.node_index or name in edge_ids):
                problems.append(f"macro-node id {name!r} collides with an existing id")
        if problems:
            raise ValidationError("; ".join(problems), problems)

    def to_dict(self) -> dict:
        return {"blocks": [list(b) for b in self.blocks], "names": list(self.names)}


@dataclass
class MacroNode:
    """A collapsed block: its local sections, boundary maps, and induced kernel."""

    id: NodeId
    block: tuple[NodeId, ...]
    stalk: StateSpace
    local_sections: list[Section]
    internal_edges: tuple[str, ...]
    in_edges: tuple[str, ...]
    out_edges: tuple[str, ...]
    tail_tables: dict[str, tuple[int, ...]]
    head_tables: dict[str, tuple[int, ...]]
    kernel: NodeKernel | None = None

    def lift(self, state: int) -> Section:
        return self.local_sections[state]

    def _vector(self, sec: Section) -> tuple[int, ...]:
        return tuple(sec.node_states[v] for v in self.block) + tuple(sec.edge_states[e] for e in self.internal_edges)

    def nearest(self, vector: Sequence[int]) -> int:
        """Index of the local section closest in Hamming distance to ``vector`` (nodes then internal edges)."""
        vectors = self._vectors
        best, best_d = 0, None
        for k, target in enumerate(vectors):
            d = sum(a != b for a, b in zip(vector, target))
            if best_d is None or d < best_d:
                best, best_d = k, d
                if d == 0:
                    break
        return best

    @cached_property
    def _vectors(self) -> list[tuple[int, ...]]:
        return [self._vector(s) for s in self.local_sections]

    def project(self, section: Section) -> int:
        return self.nearest(self._vector(section))


def _macro_labels(sheaf: Sheaf, block, sections) -> StateSpace:
    if len(block) == 1:
        v = block[0]
        return StateSpace(tuple(sheaf.node_stalks[v].labels[s.node_states[v]] for s in sections))
    return StateSpace(
        tuple(",".join(f"{v}={sheaf.node_stalks[v].labels[s.node_states[v]]}" for v in block) for s in sections)
    )


def collapse_subgraph(sheaf: Sheaf, rule: UpdateRule | None, block: Sequence[NodeId], macro_id: NodeId | None = None) -> MacroNode:
    """Collapse ``block`` into a single macro node.

    Raises EmptyLocalSectionsError when the block's internal constraints admit
    no local section.
    """
    index = sheaf.graph.node_index
    block = tuple(sorted(set(block), key=index.__getitem__))
    if not block:
        raise ValidationError("cannot collapse an empty block")
    members = set(block)
    local = enumerate_global_sections(induced_subsheaf(sheaf, block), limit=LOCAL_SECTION_CAP)
    if local.truncated:
        raise CapExceededError(
            f"block {list(block)!r} has more than {LOCAL_SECTION_CAP} local sections", cap=LOCAL_SECTION_CAP
        )
    if not local.sections:
        raise EmptyLocalSectionsError(block)
    sections = local.sections
    internal = tuple(e.id for e in sheaf.edges if e.source in members and e.target in members)
    in_edges = tuple(e.id for e in sheaf.edges if e.target in members and e.source not in members)
    out_edges = tuple(e.id for e in sheaf.edges if e.source in members and e.target not in members)
    edges = sheaf.graph.edge_by_id
    tails = {eid: tuple(sheaf.tail_maps[eid](s.node_states[edges[eid].source]) for s in sections) for eid in out_edges}
    heads = {eid: tuple(sheaf.head_maps[eid](s.node_states[edges[eid].target]) for s in sections) for eid in in_edges}
    node = MacroNode(
        id=macro_id if macro_id is not None else ("[" + "+".join(block) + "]" if len(block) > 1 else block[0]),
        block=block,
        stalk=_macro_labels(sheaf, block, sections),
        local_sections=sections,
        internal_edges=internal,
        in_edges=in_edges,
        out_edges=out_edges,
        tail_tables=tails,
        head_tables=heads,
    )
    if rule is not None:
        node.kernel = _macro_kernel(sheaf, rule, node)
    return node


def _macro_kernel(sheaf: Sheaf, rule: UpdateRule, node: MacroNode) -> NodeKernel:
    edges = sheaf.graph.edge_by_id
    in_cards = [sheaf.edge_card(e) for e in node.in_edges]
    n_local = len(node.local_sections)
    table = np.full((n_local, *in_cards, n_local), np.nan)
    projected: dict[tuple[int, ...], int] = {}

    def project(states: tuple[int, ...]) -> int:
        hit = projected.get(states)
        if hit is None:
            assign = dict(zip(node.block, states))
            internal = tuple(sheaf.tail_maps[e](assign[edges[e].source]) for e in node.internal_edges)
            hit = projected[states] = node.nearest(states + internal)
        return hit

    incoming = {w: sheaf.graph.incoming(w) for w in node.block}
    for m, sec in enumerate(node.local_sections):
        for inputs in product_space(in_cards):
            values = dict(sec.edge_states)
            values.update(zip(node.in_edges, inputs))
            supports = []
            for w in node.block:
                row = rule.kernels[w].row(sec.node_states[w], [values[e] for e in incoming[w]])
                if row is None:
                    break
                supports.append([(s, p) for s, p in enumerate(row) if p > 0])
            else:
                out = np.zeros(n_local)
                for combo in itertools.product(*supports):
                    states = tuple(s for s, _ in combo)
                    out[project(states)] += math.prod(p for _, p in combo)
                table[(m, *inputs)] = out
    return NodeKernel(table)


@dataclass
class QuotientModel:
    sheaf: Sheaf
    rule: UpdateRule | None
    grouping: MacroGrouping
    macro_nodes: dict[NodeId, MacroNode]
    node_map: dict[NodeId, NodeId]
    micro: Sheaf = field(repr=False)

    @property
    def macro_graph(self) -> AttributedGraph:
        return self.sheaf.graph

    def project(self, section: Section) -> Section:
        """Macro section for a micro section; inconsistent blocks go to their nearest local section."""
        states = {}
        for name in self.sheaf.nodes:
            if name in self.macro_nodes:
                states[name] = self.macro_nodes[name].project(section)
            else:
                states[name] = section.node_states[name]
        edges = {e.id: section.edge_states[e.id] for e in self.sheaf.edges}
        return Section(states, edges)

    def lift(self, section: Section) -> Section:
        """Micro section for a macro section. Exact, because macro states are full local sections."""
        nodes, edges = {}, dict(section.edge_states)
        for name, state in section.node_states.items():
            if name in self.macro_nodes:
                local = self.macro_nodes[name].lift(state)
                nodes.update(local.node_states)
                edges.update(local.edge_states)
            else:
                nodes[name] = state
        return Section({v: nodes[v] for v in self.micro.nodes}, {e.id: edges[e.id] for e in self.micro.edges})


def build_quotient(sheaf: Sheaf, rule: UpdateRule | None, grouping: MacroGrouping) -> QuotientModel:
    grouping.validate(sheaf)
    macro_nodes: dict[NodeId, MacroNode] = {}
    node_map: dict[NodeId, NodeId] = {}
    for name, block in zip(grouping.names, grouping.blocks):
        for v in block:
            node_map[v] = name
        if len(block) >= 2:
            macro_nodes[name] = collapse_subgraph(sheaf, rule, block, name)

    node_stalks, node_attrs = {}, {}
    for name, block in zip(grouping.names, grouping.blocks):
        if name in macro_nodes:
            node_stalks[name] = macro_nodes[name].stalk
            node_attrs[name] = {"block": list(block), "local_sections": len(macro_nodes[name].local_sections)}
        else:
            node_stalks[name] = sheaf.node_stalks[name]
            if name in sheaf.graph.node_attrs:
                node_attrs[name] = sheaf.graph.node_attrs[name]

    edges, edge_stalks, tails, heads, edge_attrs = [], {}, {}, {}, {}
    for e in sheaf.edges:
        src, dst = node_map[e.source], node_map[e.target]
        if src == dst and src in macro_nodes:
            continue
        space = sheaf.edge_stalks[e.id]
        edges.append(Edge(e.id, src, dst))
        edge_stalks[e.id] = space
        if e.id in sheaf.graph.edge_attrs:
            edge_attrs[e.id] = sheaf.graph.edge_attrs[e.id]
        if src in macro_nodes:
            tails[e.id] = RestrictionMap(node_stalks[src], space, macro_nodes[src].tail_tables[e.id])
        else:
            tails[e.id] = sheaf.tail_maps[e.id]
        if dst in macro_nodes:
            heads[e.id] = RestrictionMap(node_stalks[dst], space, macro_nodes[dst].head_tables[e.id])
        else:
            heads[e.id] = sheaf.head_maps[e.id]

    graph = AttributedGraph(tuple(grouping.names), tuple(edges), node_attrs, edge_attrs)
    quotient = Sheaf(graph, node_stalks, edge_stalks, tails, heads)
    macro_rule = None
    if rule is not None:
        macro_rule = UpdateRule(
            {name: macro_nodes[name].kernel if name in macro_nodes else rule.kernels[name] for name in grouping.names}
        )
    return QuotientModel(quotient, macro_rule, grouping, macro_nodes, node_map, sheaf)


@dataclass
class EmergenceReport:
    grouping: MacroGrouping
    ei_micro: float
    ei_macro: float
    r_cause: float
    micro: EIResult
    macro: EIResult
    score: float | None = None
    variant: str | None = None
    trace: list = field(default_factory=list)

    @property
    def emergent(self) -> bool:
        return self.r_cause > 0

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping.to_dict(),
            "ei_micro_bits": round(self.ei_micro, 12),
            "ei_macro_bits": round(self.ei_macro, 12),
            "r_cause_bits": round(self.r_cause, 12),
            "score": None if self.score is None else round(self.score, 12),
            "variant": self.variant,
            "micro": self.micro.to_dict(),
            "macro": self.macro.to_dict(),
        }


def causal_resilience_index(
    sheaf: Sheaf,
    rule: UpdateRule,
    baseline: Section,
    grouping: MacroGrouping,
    config: EIConfig | None = None,
    jobs: int = 1,
) -> EmergenceReport:
    """R_cause = EI over the macro nodes of the quotient minus EI over their member nodes.

    Both sides intervene on and read the same part of the system: the macro
    blocks, or every block when the grouping has no macro block.
    """
    config = config or EIConfig()
    quotient = build_quotient(sheaf, rule, grouping)
    chosen = [(n, b) for n, b in zip(grouping.names, grouping.blocks) if len(b) >= 2] or list(
        zip(grouping.names, grouping.blocks)
    )
    index = sheaf.graph.node_index
    micro_vars = sorted((v for _, b in chosen for v in b), key=index.__getitem__)
    macro_vars = [n for n, _ in chosen]
    micro = effective_information(sheaf, rule, baseline, config.spec(micro_vars, micro_vars), jobs)
    macro = effective_information(
        quotient.sheaf, quotient.rule, quotient.project(baseline), config.spec(macro_vars, macro_vars), jobs
    )
    return EmergenceReport(grouping, micro.ei_bits, macro.ei_bits, macro.ei_bits - micro.ei_bits, micro, macro)


@dataclass(frozen=True)
class SearchConfig:
    mode: str = "auto"
    variant: str = "mean"
    max_block_size: int = 6
    exact_cap: int = 12
    ei: EIConfig = field(default_factory=EIConfig)
    min_score: float = 1e-12
    reports: bool = True
    top_k: int | None = None


@dataclass
class Candidate:
    block: tuple[NodeId, ...]
    grouping: MacroGrouping
    score: float
    raw_score: float
    mean_score: float
    report: EmergenceReport | None = None

    def to_dict(self) -> dict:
        out = {
            "block": list(self.block),
            "score": round(self.score, 12),
            "raw_score": round(self.raw_score, 12),
            "mean_score": round(self.mean_score, 12),
        }
        if self.report is not None:
            out["report"] = self.report.to_dict()
        return out


@dataclass
class SearchResult:
    candidates: list[Candidate]
    pairwise: PairwiseEI
    mode: str
    variant: str
    trace: list = field(default_factory=list)
    table: list[Candidate] = field(default_factory=list, repr=False)

    @property
    def best(self) -> Candidate | None:
        return self.candidates[0] if self.candidates else None


def block_scores(matrix: np.ndarray, members: Sequence[int]) -> tuple[float, float]:
    """Sum of off-diagonal pairwise EI inside a block and its mean per ordered pair."""
    if len(members) < 2:
        return 0.0, 0.0
    sub = matrix[np.ix_(members, members)]
    raw = float(sub.sum() - np.trace(sub))
    return raw, raw / (len(members) * (len(members) - 1))


def _rank_key(score: float, members: Sequence[int]):
    return (-round(score, SCORE_DIGITS), len(members), tuple(members))


def _connected_blocks(sheaf: Sheaf, max_size: int) -> list[tuple[int, ...]]:
    n = len(sheaf.nodes)
    out = []
    for size in range(2, min(max_size, n) + 1):
        for combo in itertools.combinations(range(n), size):
            if sheaf.graph.is_connected(sheaf.nodes[i] for i in combo):
                out.append(combo)
    return out


def _greedy_blocks(sheaf: Sheaf, matrix: np.ndarray, variant: str, max_size: int, trace: list) -> list[tuple[int, ...]]:
    """Agglomerate adjacent blocks while some merge raises the block score."""
    pick = 1 if variant == "mean" else 0
    score = lambda members: block_scores(matrix, members)[pick]
    adjacency = [set() for _ in sheaf.nodes]
    index = sheaf.graph.node_index
    for e in sheaf.edges:
        a, b = index[e.source], index[e.target]
        if a != b:
            adjacency[a].add(b)
            adjacency[b].add(a)
    blocks = [(i,) for i in range(len(sheaf.nodes))]
    while True:
        best = None
        for x, y in itertools.combinations(range(len(blocks)), 2):
            a, b = blocks[x], blocks[y]
            if len(a) + len(b) > max_size or not any(adjacency[i] & set(b) for i in a):
                continue
            merged = tuple(sorted(a + b))
            s = score(merged)
            if s <= max(score(a), score(b)) + 10.0**-SCORE_DIGITS:
                continue
            key = _rank_key(s, merged)
            if best is None or key < best[0]:
                best = (key, x, y, merged, s)
        if best is None:
            break
        _, x, y, merged, s = best
        trace.append({"merge": [[sheaf.nodes[i] for i in blocks[x]], [sheaf.nodes[i] for i in blocks[y]]], "score": round(s, 12)})
        blocks = [b for k, b in enumerate(blocks) if k not in (x, y)] + [merged]
    return [b for b in blocks if len(b) >= 2]


def _report_for(sheaf, rule, baseline, grouping, ei_config):
    return causal_resilience_index(sheaf, rule, baseline, grouping, ei_config)


def search_macro_nodes(
    sheaf: Sheaf,
    rule: UpdateRule,
    baseline: Section,
    config: SearchConfig | None = None,
    jobs: int = 1,
    pairwise: PairwiseEI | None = None,
) -> SearchResult:
    """Rank candidate macro nodes by their internal pairwise EI.

    Exhaustive mode scores every connected block of 2..max_block_size nodes;
    greedy mode grows blocks by agglomeration. ``variant`` is ``"mean"``
    (EI per ordered pair, the default) or ``"sum"`` (raw pairwise sum).
    Zero-score candidates are dropped; ties go to smaller blocks, then node
    order.
    """
    config = config or SearchConfig()
    if config.variant not in ("mean", "sum"):
        raise ValidationError(f"unknown score variant {config.variant!r}")
    mode = config.mode
    n = len(sheaf.nodes)
    if mode == "auto":
        mode = "exhaustive" if n <= config.exact_cap else "greedy"
    if mode == "exhaustive" and n > config.exact_cap:
        raise CapExceededError(
            f"exhaustive search is capped at {config.exact_cap} nodes ({n} given); use greedy mode",
            required=n,
            cap=config.exact_cap,
        )
    if mode not in ("exhaustive", "greedy"):
        raise ValidationError(f"unknown search mode {config.mode!r}")

    pw = pairwise or pairwise_ei_matrix(sheaf, rule, baseline, config=config.ei, jobs=jobs)
    trace: list = []
    if mode == "exhaustive":
        blocks = _connected_blocks(sheaf, config.max_block_size)
    else:
        blocks = _greedy_blocks(sheaf, pw.matrix, config.variant, config.max_block_size, trace)

    table = []
    for members in blocks:
        raw, mean = block_scores(pw.matrix, members)
        score = mean if config.variant == "mean" else raw
        block = tuple(sheaf.nodes[i] for i in members)
        table.append((_rank_key(score, members), block, raw, mean, score))
    table.sort(key=lambda row: row[0])
    all_candidates = [
        Candidate(block, MacroGrouping.from_blocks(sheaf, [block]), score, raw, mean)
        for _, block, raw, mean, score in table
    ]
    ranked = [c for c in all_candidates if c.score > config.min_score]
    if config.top_k is not None:
        ranked = ranked[: config.top_k]
    if config.reports and ranked:
        reports = parallel_map(
            _report_for, [(sheaf, rule, baseline, c.grouping, config.ei) for c in ranked], jobs
        )
        for c, rep in zip(ranked, reports):
            rep.score, rep.variant = c.score, config.variant
            c.report = rep
    return SearchResult(ranked, pw, mode, config.variant, trace, all_candidates)

