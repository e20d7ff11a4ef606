"""Discrete flow dynamics on a sheaf: local kernels, failure clamps, stabilization.

Updates are synchronous. Each step samples every node's next state from its
kernel, then recomputes every edge from its tail map; head-side disagreement
is what stabilization drives to zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidEventError, TotalityError, ValidationError
from .model import NodeId, Section, Sheaf, check_section, consistency_residual, product_space

ROW_TOL = 1e-12
MAX_KERNEL_ENTRIES = 1 << 24


class NonSectionWarning(UserWarning):
    """An initial state that is not a global section was accepted."""


@dataclass(frozen=True, eq=False)
class NodeKernel:
    """Transition kernel of one node.

    ``table`` has shape ``(own, *incoming, own)``: the leading axes index the
    node's own state and the states of its incoming edges (in edge order), the
    last axis is the distribution over the next own state. Undefined inputs are
    rows of NaN; hitting one during simulation raises TotalityError.
    """

    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=np.float64)
        if table.ndim < 2 or table.shape[0] != table.shape[-1]:
            raise ValueError(f"kernel table shape {table.shape} is not (own, *inputs, own)")
        rows = table.reshape(-1, table.shape[-1])
        undefined = np.isnan(rows)
        partial = undefined.any(axis=1) & ~undefined.all(axis=1)
        if partial.any():
            raise ValueError("kernel rows must be fully defined or fully undefined")
        defined = rows[~undefined.any(axis=1)]
        if (defined < 0).any():
            raise ValueError("kernel probabilities must be non-negative")
        if defined.size and np.abs(defined.sum(axis=1) - 1.0).max() > ROW_TOL:
            raise ValueError("kernel rows must sum to 1 within 1e-12")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def own_card(self) -> int:
        return self.table.shape[0]

    @property
    def input_cards(self) -> tuple[int, ...]:
        return self.table.shape[1:-1]

    @cached_property
    def deterministic(self) -> bool:
        rows = self.table.reshape(-1, self.own_card)
        rows = rows[~np.isnan(rows[:, 0])]
        return bool(np.all((rows == 0.0) | (rows == 1.0)))

    @cached_property
    def is_identity(self) -> bool:
        expected = NodeKernel.identity(self.own_card, self.input_cards).table
        return bool(np.array_equal(self.table, expected, equal_nan=True))

    def row(self, own: int, inputs: Sequence[int] = ()) -> np.ndarray | None:
        r = self.table[(own, *inputs)]
        return None if np.isnan(r[0]) else r

    def __eq__(self, other):
        if not isinstance(other, NodeKernel):
            return NotImplemented
        return self.table.shape == other.table.shape and np.array_equal(self.table, other.table, equal_nan=True)

    __hash__ = None

    @classmethod
    def from_function(cls, own_card: int, input_cards: Sequence[int], fn: Callable) -> "NodeKernel":
        """Tabulate ``fn(own, inputs)`` over every input combination.

        ``fn`` returns the next state index, a probability vector, a
        ``{state: prob}`` mapping, or ``None`` for an undefined input.
        """
        input_cards = tuple(input_cards)
        size = own_card * own_card * int(np.prod(input_cards, dtype=np.int64))
        if size > MAX_KERNEL_ENTRIES:
            raise ValueError(f"kernel table would need {size} entries")
        table = np.full((own_card, *input_cards, own_card), np.nan)
        for own in range(own_card):
            for inputs in product_space(input_cards):
                out = fn(own, inputs)
                if out is None:
                    continue
                row = np.zeros(own_card)
                if isinstance(out, (int, np.integer)):
                    row[int(out)] = 1.0
                elif isinstance(out, Mapping):
                    for state, p in out.items():
                        row[int(state)] += p
                else:
                    row[:] = out
                table[(own, *inputs)] = row
        return cls(table)

    @classmethod
    def identity(cls, own_card: int, input_cards: Sequence[int] = ()) -> "NodeKernel":
        return cls.from_function(own_card, input_cards, lambda own, _: own)

    @classmethod
    def constant(cls, own_card: int, input_cards: Sequence[int], state: int) -> "NodeKernel":
        return cls.from_function(own_card, input_cards, lambda own, _: state)


@dataclass(frozen=True)
class UpdateRule:
    kernels: Mapping[NodeId, NodeKernel]

    def __post_init__(self):
        object.__setattr__(self, "kernels", dict(self.kernels))

    @property
    def mode(self) -> str:
        return "deterministic" if all(k.deterministic for k in self.kernels.values()) else "stochastic"

    @property
    def deterministic(self) -> bool:
        return self.mode == "deterministic"

    @classmethod
    def identity(cls, sheaf: Sheaf) -> "UpdateRule":
        return cls.from_functions(sheaf, {})

    @classmethod
    def from_functions(cls, sheaf: Sheaf, fns: Mapping[NodeId, Callable], default: Callable | None = None) -> "UpdateRule":
        """Build kernels from per-node ``fn(own, inputs)`` callables; missing nodes keep their state."""
        kernels = {}
        for v in sheaf.nodes:
            fn = fns.get(v, default)
            cards = input_cards(sheaf, v)
            if fn is None:
                kernels[v] = NodeKernel.identity(sheaf.node_card(v), cards)
            else:
                kernels[v] = NodeKernel.from_function(sheaf.node_card(v), cards, fn)
        return cls(kernels)


def input_cards(sheaf: Sheaf, node: NodeId) -> tuple[int, ...]:
    return tuple(sheaf.edge_card(e) for e in sheaf.graph.incoming(node))


def check_rule(sheaf: Sheaf, rule: UpdateRule) -> None:
    """Raise ValidationError unless every node has a kernel shaped for its stalk and inputs."""
    problems = []
    for v in sheaf.nodes:
        kernel = rule.kernels.get(v)
        if kernel is None:
            problems.append(f"node {v!r} has no kernel")
            continue
        expected = (sheaf.node_card(v), *input_cards(sheaf, v), sheaf.node_card(v))
        if kernel.table.shape != expected:
            problems.append(f"kernel of node {v!r} has shape {kernel.table.shape}, expected {expected}")
    extra = set(rule.kernels) - set(sheaf.nodes)
    problems.extend(f"kernel given for unknown node {v!r}" for v in sorted(extra))
    if problems:
        raise ValidationError("; ".join(problems), problems)


def _sample_rows(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(rows, axis=1)
    hit = (cum > (u * cum[:, -1])[:, None]) & (rows > 0)
    return hit.argmax(axis=1)


def advance(
    sheaf: Sheaf,
    rule: UpdateRule,
    nodes: np.ndarray,
    edges: np.ndarray,
    node_clamp: Mapping[int, int] | None = None,
    edge_clamp: Mapping[int, int] | None = None,
    u: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One synchronous step for a batch of states.

    ``nodes`` is ``(batch, n_nodes)``, ``edges`` is ``(batch, n_edges)``;
    ``u`` holds one uniform draw per node per row and is required only when a
    stochastic kernel is evaluated.
    """
    node_clamp = node_clamp or {}
    edge_clamp = edge_clamp or {}
    nxt = np.empty_like(nodes)
    for i, v in enumerate(sheaf.nodes):
        if i in node_clamp:
            nxt[:, i] = node_clamp[i]
            continue
        kernel = rule.kernels[v]
        ins = sheaf.incoming_index[i]
        rows = kernel.table[(nodes[:, i], *(edges[:, k] for k in ins))]
        undefined = np.isnan(rows[:, 0])
        if undefined.any():
            j = int(undefined.argmax())
            raise TotalityError(v, int(nodes[j, i]), [int(edges[j, k]) for k in ins])
        if kernel.deterministic:
            nxt[:, i] = rows.argmax(axis=1)
        else:
            if u is None:
                raise ValueError("a random stream is required for stochastic kernels")
            nxt[:, i] = _sample_rows(rows, u[:, i])
    new_edges = sheaf.tail_force(nxt)
    for k, s in edge_clamp.items():
        new_edges[:, k] = s
    return nxt, new_edges


def resolve_clamps(sheaf: Sheaf, clamps) -> tuple[dict[int, int], dict[int, int]]:
    """Split ``{cell: state}`` (or ``(cell, state)`` pairs) into node and edge index maps."""
    if clamps is None:
        return {}, {}
    items = clamps.items() if isinstance(clamps, Mapping) else clamps
    node_clamp, edge_clamp = {}, {}
    nidx, eidx = sheaf.graph.node_index, sheaf.graph.edge_index
    for cell, state in items:
        state = int(state)
        if cell in nidx:
            if not 0 <= state < sheaf.node_card(cell):
                raise InvalidEventError(f"clamp state {state} is outside the stalk of node {cell!r}")
            node_clamp[nidx[cell]] = state
        elif cell in eidx:
            if not 0 <= state < sheaf.edge_card(cell):
                raise InvalidEventError(f"clamp state {state} is outside the stalk of edge {cell!r}")
            edge_clamp[eidx[cell]] = state
        else:
            raise InvalidEventError(f"clamp references unknown cell {cell!r}")
    return node_clamp, edge_clamp


def _suspended_edges(sheaf: Sheaf, node_clamp, edge_clamp) -> set[str]:
    # constraints touching a clamped cell are suspended while the clamp holds
    clamped_nodes = {sheaf.nodes[i] for i in node_clamp}
    out = {sheaf.edges[k].id for k in edge_clamp}
    out.update(e.id for e in sheaf.edges if e.source in clamped_nodes or e.target in clamped_nodes)
    return out


def apply_clamps(sheaf: Sheaf, section: Section, clamps) -> Section:
    """Force clamped cells into ``section``, re-deriving edges from tails."""
    node_clamp, edge_clamp = resolve_clamps(sheaf, clamps)
    row = section.node_row(sheaf)
    for i, s in node_clamp.items():
        row[i] = s
    edges = sheaf.tail_force(row)
    for k, s in edge_clamp.items():
        edges[k] = s
    return Section.from_rows(sheaf, row, edges)


def step(sheaf: Sheaf, rule: UpdateRule, section: Section, clamps=None, rng: np.random.Generator | None = None) -> Section:
    """One synchronous update. Clamps are forced into ``section`` first, so neighbours read them this step."""
    check_section(sheaf, section)
    node_clamp, edge_clamp = resolve_clamps(sheaf, clamps)
    if node_clamp or edge_clamp:
        section = apply_clamps(sheaf, section, clamps)
    u = rng.random((1, len(sheaf.nodes))) if rng is not None else None
    nodes, edges = advance(
        sheaf, rule, section.node_row(sheaf)[None, :], section.edge_row(sheaf)[None, :], node_clamp, edge_clamp, u
    )
    return Section.from_rows(sheaf, nodes[0], edges[0])


@dataclass
class StabilizeResult:
    section: Section
    residual: int
    iterations: int
    converged: bool
    cycle: bool = False


def stabilize(
    sheaf: Sheaf,
    rule: UpdateRule,
    section: Section,
    clamps=None,
    max_iters: int = 100,
    rng: np.random.Generator | None = None,
) -> StabilizeResult:
    """Iterate ``step`` until a consistent fixed point, a repeated state, or ``max_iters``.

    Clamps are imposed on the starting state before the first step.
    ``iterations`` counts steps that changed the state. Deterministic rules
    stop on the first repeat: a consistent fixed point converges, any other
    repeat is reported with ``converged=False``. Stochastic rules converge on
    the first sampled step with zero residual.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    check_section(sheaf, section)
    node_clamp, edge_clamp = resolve_clamps(sheaf, clamps)
    if node_clamp or edge_clamp:
        section = apply_clamps(sheaf, section, clamps)
    suspended = _suspended_edges(sheaf, node_clamp, edge_clamp)
    nodes, edges = section.node_row(sheaf)[None, :], section.edge_row(sheaf)[None, :]

    def result(n, e, iterations, converged, cycle=False):
        sec = Section.from_rows(sheaf, n[0], e[0])
        res = consistency_residual(sheaf, sec, suspended)
        return StabilizeResult(sec, res, iterations, converged and res == 0, cycle)

    if rule.deterministic:
        seen = {(nodes.tobytes(), edges.tobytes())}
        for it in range(1, max_iters + 1):
            n2, e2 = advance(sheaf, rule, nodes, edges, node_clamp, edge_clamp)
            if np.array_equal(n2, nodes) and np.array_equal(e2, edges):
                return result(nodes, edges, it - 1, True)
            key = (n2.tobytes(), e2.tobytes())
            if key in seen:
                return result(n2, e2, it, False, cycle=True)
            seen.add(key)
            nodes, edges = n2, e2
        return result(nodes, edges, max_iters, False)

    rng = rng if rng is not None else np.random.default_rng(0)
    for it in range(1, max_iters + 1):
        nodes, edges = advance(sheaf, rule, nodes, edges, node_clamp, edge_clamp, rng.random((1, len(sheaf.nodes))))
        res = result(nodes, edges, it, True)
        if res.converged:
            return res
    return result(nodes, edges, max_iters, False)


@dataclass(frozen=True)
class FailureEvent:
    target: str
    failed_state: int
    at_step: int = 0
    sticky: bool = True

    def __post_init__(self):
        if self.at_step < 0:
            raise InvalidEventError("at_step must be non-negative")


@dataclass(frozen=True)
class ScenarioConfig:
    horizon: int = 0
    seed: int = 0
    failures: tuple[FailureEvent, ...] = ()
    stabilize_max_iters: int = 100

    def __post_init__(self):
        object.__setattr__(self, "failures", tuple(self.failures))
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.stabilize_max_iters < 1:
            raise ValueError("stabilize_max_iters must be at least 1")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class Trajectory:
    sections: list[Section]
    residuals: list[int]
    events_applied: list[tuple[int, FailureEvent]] = field(default_factory=list)
    stabilized: StabilizeResult | None = None


def check_events(sheaf: Sheaf, events: Iterable[FailureEvent]) -> None:
    for ev in events:
        resolve_clamps(sheaf, [(ev.target, ev.failed_state)])


def _clamps_at(events: Sequence[FailureEvent], t: int) -> dict[str, int]:
    active = [ev for ev in events if ev.at_step == t or (ev.sticky and ev.at_step <= t)]
    active.sort(key=lambda ev: ev.at_step)
    return {ev.target: ev.failed_state for ev in active}


def run_scenario(sheaf: Sheaf, rule: UpdateRule, initial: Section, config: ScenarioConfig) -> Trajectory:
    """Run ``config.horizon`` steps with failures clamped at their scheduled steps.

    A failure scheduled at step t is forced into the recorded state t, so its
    neighbours first feel it in state t+1. Sticky failures stay clamped
    afterwards; others are released to their kernels. After the horizon the
    final state is stabilized with every sticky failure still in force.
    """
    check_section(sheaf, initial)
    check_events(sheaf, config.failures)
    if consistency_residual(sheaf, initial) != 0:
        warnings.warn("initial state is not a global section; dynamics will repair it", NonSectionWarning, stacklevel=2)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    events = list(config.failures)

    def residual(sec, clamps):
        nc, ec = resolve_clamps(sheaf, clamps)
        return consistency_residual(sheaf, sec, _suspended_edges(sheaf, nc, ec))

    def held(t):
        # sticky failures already in force before step t keep their cells clamped through it
        return {ev.target: ev.failed_state for ev in sorted(events, key=lambda ev: ev.at_step)
                if ev.sticky and ev.at_step < t}

    log = [(0, ev) for ev in events if ev.at_step == 0]
    clamps0 = _clamps_at(events, 0)
    current = apply_clamps(sheaf, initial, clamps0) if clamps0 else initial
    sections, residuals = [current], [residual(current, clamps0)]
    for t in range(1, config.horizon + 1):
        log.extend((t, ev) for ev in events if ev.at_step == t)
        current = step(sheaf, rule, current, held(t), rng)
        clamps = _clamps_at(events, t)
        if clamps:
            current = apply_clamps(sheaf, current, clamps)
        sections.append(current)
        residuals.append(residual(current, clamps))

    sticky = held(config.horizon + 1)
    settled = stabilize(sheaf, rule, current, sticky, config.stabilize_max_iters, rng)
    return Trajectory(sections, residuals, log, settled)
