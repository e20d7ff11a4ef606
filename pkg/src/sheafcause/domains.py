"""Toy models for three application domains: microservices, neural circuits, power grids.

Every builder returns a ``DomainModel``: the sheaf, its update rule, an
initial state that is a global section and a fixed point, and one scripted
failure scenario.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from .dynamics import FailureEvent, ScenarioConfig, UpdateRule, stabilize
from .model import Section, Sheaf, StateSpace, is_global_section, validate_sheaf

HEALTH = ("healthy", "degraded", "down")
LOAD = ("low", "mid", "high")
REQUESTS = ("normal", "reduced", "none")
NEURON = ("quiet", "firing")
SIGNAL = ("absent", "present")


class DomainModel(NamedTuple):
    sheaf: Sheaf
    rule: UpdateRule
    initial: Section
    scenario: ScenarioConfig


@dataclass(frozen=True)
class DomainTemplate:
    name: str
    parameters: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def build(self) -> DomainModel:
        try:
            builder = BUILDERS[self.name]
        except KeyError:
            raise ValueError(f"unknown domain template {self.name!r}; choose from {sorted(BUILDERS)}") from None
        return builder(**{**self.parameters, "seed": self.seed})


def _finish(sheaf: Sheaf, rule: UpdateRule, initial: Section, scenario: ScenarioConfig) -> DomainModel:
    report = validate_sheaf(sheaf)
    if not report.ok:
        raise AssertionError(f"generated sheaf is invalid: {report.violations}")
    if not is_global_section(sheaf, initial):
        raise ValueError("these parameters do not admit a consistent baseline")
    return DomainModel(sheaf, rule, initial, scenario)


def build_microservice(
    n_services: int = 3,
    topology: str = "chain",
    max_fan_in: int = 2,
    load_levels: int = 2,
    seed: int = 0,
) -> DomainModel:
    """Services in a call DAG; edges point from caller to callee.

    A service's state is (health, load). Edges carry the request level the
    caller emits: healthy -> normal, degraded -> reduced, down -> none, and
    the callee's head map reads its own health the same way. A service whose
    upstream edges are mostly ``none`` goes down; any other shortfall degrades
    it. Services without callers keep their state. Load is carried unchanged.
    """
    if n_services < 2:
        raise ValueError("n_services must be at least 2")
    if not 1 <= load_levels <= len(LOAD):
        raise ValueError(f"load_levels must be between 1 and {len(LOAD)}")
    if max_fan_in < 1:
        raise ValueError("max_fan_in must be at least 1")
    if topology not in ("chain", "dag"):
        raise ValueError("topology must be 'chain' or 'dag'")
    rng = np.random.default_rng(seed)
    loads = LOAD[:load_levels] if load_levels > 1 else ("nominal",)
    labels = StateSpace(tuple(f"{h}@{l}" for h in HEALTH for l in loads))
    requests = StateSpace(REQUESTS)
    names = [f"svc{i}" for i in range(n_services)]

    parents: dict[str, list[str]] = {names[0]: []}
    for i in range(1, n_services):
        if topology == "chain":
            chosen = [i - 1]
        else:
            k = int(rng.integers(1, min(max_fan_in, i) + 1))
            chosen = sorted(int(x) for x in rng.choice(i, size=k, replace=False))
        parents[names[i]] = [names[j] for j in chosen]

    emit = tuple(labels.index(f"{h}@{l}") // len(loads) for h in HEALTH for l in loads)
    edges = [(f"{p}->{v}", p, v, requests, emit, emit) for v in names for p in parents[v]]
    load_of = {v: int(rng.integers(load_levels)) for v in names}
    sheaf = Sheaf.build(
        {v: labels for v in names},
        edges,
        node_attrs={v: {"role": "service", "load": loads[load_of[v]]} for v in names},
        edge_attrs={e[0]: {"kind": "api_call"} for e in edges},
    )

    def kernel(own, inputs):
        if not inputs:
            return own
        load = own % len(loads)
        none = sum(1 for x in inputs if x == 2)
        if 2 * none > len(inputs):
            health = 2
        elif any(x != 0 for x in inputs):
            health = 1
        else:
            health = 0
        return health * len(loads) + load

    rule = UpdateRule.from_functions(sheaf, {v: kernel for v in names})
    initial = sheaf.section_from_nodes([load_of[v] for v in names])
    root_down = 2 * len(loads) + load_of[names[0]]
    scenario = ScenarioConfig(horizon=0, seed=seed, failures=(FailureEvent(names[0], root_down, 0, True),))
    return _finish(sheaf, rule, initial, scenario)


def build_neural(
    n_neurons: int = 2,
    topology: str = "pair",
    edge_prob: float = 0.5,
    threshold: int = 1,
    seed: int = 0,
) -> DomainModel:
    """Binary threshold units; each edge carries the presynaptic state unchanged.

    A neuron with inputs fires iff at least ``threshold`` incoming edges carry a
    signal; a neuron without inputs keeps its state. ``pair`` is two mutually
    exciting neurons, ``assembly`` a complete digraph, ``random`` an
    Erdos-Renyi digraph without self-loops. The baseline is all firing when
    that is a fixed point, otherwise all quiet. A lesion clamps a neuron quiet.
    """
    if n_neurons < 2:
        raise ValueError("n_neurons must be at least 2")
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    if topology == "pair" and n_neurons != 2:
        raise ValueError("the pair topology has exactly 2 neurons")
    rng = np.random.default_rng(seed)
    names = [f"n{i}" for i in range(n_neurons)]
    if topology in ("pair", "assembly"):
        pairs = [(a, b) for a in names for b in names if a != b]
    elif topology == "random":
        pairs = [(a, b) for a in names for b in names if a != b and rng.random() < edge_prob]
    else:
        raise ValueError("topology must be 'pair', 'assembly' or 'random'")
    edges = [(f"{a}->{b}", a, b, SIGNAL, None, None) for a, b in pairs]
    sheaf = Sheaf.build(
        {v: NEURON for v in names},
        edges,
        node_attrs={v: {"role": "neuron", "threshold": threshold} for v in names},
        edge_attrs={e[0]: {"kind": "synapse"} for e in edges},
    )

    def kernel(own, inputs):
        if not inputs:
            return own
        return int(sum(inputs) >= threshold)

    rule = UpdateRule.from_functions(sheaf, {v: kernel for v in names})
    firing = sheaf.section_from_nodes([1] * n_neurons)
    settled = stabilize(sheaf, rule, firing, max_iters=1)
    initial = firing if settled.converged and settled.iterations == 0 else sheaf.section_from_nodes([0] * n_neurons)
    scenario = ScenarioConfig(horizon=0, seed=seed, failures=(FailureEvent(names[0], 0, 0, True),))
    return _finish(sheaf, rule, initial, scenario)


def build_powergrid(
    n_buses: int = 2,
    topology: str = "pair",
    levels: int = 2,
    capacity: int = 1,
    generation: int = 1,
    demand: int = 1,
    edge_prob: float = 0.5,
    seed: int = 0,
) -> DomainModel:
    """Discretized transport grid: generator buses feed load buses over directed lines.

    Bus states are balance levels -levels..+levels: a generator sits at its
    output, a load at minus its unserved demand (0 when fully served). A line
    carries ``min(max(tail, 0), capacity)``; at the head it must match the
    power the load is absorbing, ``min(demand + state, capacity)``. Loads draw
    on every feeding line, so losing one feeder shifts demand onto the rest.
    A line cut clamps the line to zero flow.

    Topologies: ``pair`` (one generator, one load), ``ring`` (even count,
    alternating generator/load, each generator feeding both neighbours),
    ``random`` (bipartite lines drawn with ``edge_prob``, every load fed at
    least once).
    """
    if n_buses < 2:
        raise ValueError("n_buses must be at least 2")
    if capacity < 1:
        raise ValueError("flow levels must be at least 2 (capacity >= 1)")
    if not 1 <= generation <= levels or not 1 <= demand <= levels:
        raise ValueError("generation and demand must lie in 1..levels")
    rng = np.random.default_rng(seed)
    names = [f"bus{i}" for i in range(n_buses)]
    if topology == "pair":
        if n_buses != 2:
            raise ValueError("the pair topology has exactly 2 buses")
        gens, lines = [names[0]], [(names[0], names[1])]
    elif topology == "ring":
        if n_buses < 4 or n_buses % 2:
            raise ValueError("the ring topology needs an even number of buses, at least 4")
        gens = names[0::2]
        lines = []
        for i in range(0, n_buses, 2):
            lines.append((names[i], names[(i + 1) % n_buses]))
            lines.append((names[i], names[i - 1]))
    elif topology == "random":
        gens = names[0::2]
        loads = names[1::2]
        lines = [(g, l) for g in gens for l in loads if rng.random() < edge_prob]
        for l in loads:
            if not any(dst == l for _, dst in lines):
                lines.append((gens[int(rng.integers(len(gens)))], l))
        lines.sort(key=lambda gl: (names.index(gl[0]), names.index(gl[1])))
    else:
        raise ValueError("topology must be 'pair', 'ring' or 'random'")

    balance = StateSpace(tuple(f"{x:+d}" if x else "0" for x in range(-levels, levels + 1)))
    flow = StateSpace(tuple(str(f) for f in range(capacity + 1)))
    need = {v: 0 if v in gens else demand for v in names}
    out_flow = tuple(min(max(x, 0), capacity) for x in range(-levels, levels + 1))

    def absorbed(bus):
        return tuple(min(max(need[bus] + x, 0), capacity) for x in range(-levels, levels + 1))

    edges = [(f"{a}->{b}", a, b, flow, out_flow, absorbed(b)) for a, b in lines]
    sheaf = Sheaf.build(
        {v: balance for v in names},
        edges,
        node_attrs={
            v: {"role": "generator", "output": generation} if v in gens else {"role": "load", "demand": demand}
            for v in names
        },
        edge_attrs={e[0]: {"kind": "line", "capacity": capacity} for e in edges},
    )

    def generator(own, inputs):
        return generation + levels

    def load(own, inputs):
        shortfall = max(demand - sum(inputs), 0)
        return levels - min(shortfall, levels)

    rule = UpdateRule.from_functions(sheaf, {v: generator if v in gens else load for v in names})
    guess = sheaf.section_from_nodes([generation + levels if v in gens else levels for v in names])
    initial = stabilize(sheaf, rule, guess).section
    scenario = ScenarioConfig(horizon=0, seed=seed, failures=(FailureEvent(edges[0][0], 0, 0, True),))
    return _finish(sheaf, rule, initial, scenario)


BUILDERS = {
    "microservice": build_microservice,
    "neural": build_neural,
    "powergrid": build_powergrid,
}
