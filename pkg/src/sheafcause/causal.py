"""Interventional effective information.

An intervention sets the target nodes' states (the rest of the system keeps
its baseline state), the dynamics run for ``horizon`` steps, and the effect
nodes are read. EI is the mutual information between the intervention and
the effect under the intervention distribution, uniform by default.

Exact mode expands stochastic kernels analytically, tracking a weighted set
of reachable states per intervention. Sampled mode draws Monte Carlo runs,
each intervention on its own stream derived from ``(seed, index)``, so results
do not depend on how the work is split across jobs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dynamics import UpdateRule, advance, stabilize
from .errors import (
    CapExceededError,
    InvalidDistributionError,
    InvariantBreachError,
    TotalityError,
    ValidationError,
)
from .model import NodeId, Section, Sheaf, check_section, product_space

DEFAULT_CAP = 1 << 20
DEFAULT_MAX_SUPPORT = 4096
BOUND_TOL = 1e-9


@dataclass(frozen=True)
class EIConfig:
    """Everything about an EI computation except which nodes are perturbed and read."""

    horizon: int = 1
    mode: str = "exact"
    samples: int = 10_000
    seed: int = 0
    sticky: bool = False
    read: str = "horizon"
    stabilize_max_iters: int = 100
    max_support: int = DEFAULT_MAX_SUPPORT
    cap: int = DEFAULT_CAP
    intervention_samples: int = 4096

    def spec(self, targets: Sequence[NodeId], effect_vars: Sequence[NodeId], distribution="uniform") -> "InterventionSpec":
        return InterventionSpec(targets=tuple(targets), effect_vars=tuple(effect_vars), distribution=distribution, config=self)


@dataclass(frozen=True)
class InterventionSpec:
    targets: tuple[NodeId, ...]
    effect_vars: tuple[NodeId, ...]
    distribution: str | tuple[float, ...] = "uniform"
    config: EIConfig = field(default_factory=EIConfig)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "effect_vars", tuple(self.effect_vars))
        if not isinstance(self.distribution, str):
            object.__setattr__(self, "distribution", tuple(float(w) for w in self.distribution))

    def __getattr__(self, name):
        # horizon, mode, seed, ... read through to the config
        if name != "config" and name in EIConfig.__dataclass_fields__:
            return getattr(self.config, name)
        raise AttributeError(name)

    def with_config(self, **changes) -> "InterventionSpec":
        return replace(self, config=replace(self.config, **changes))

    def validate(self, sheaf: Sheaf) -> None:
        problems = []
        if not self.targets:
            problems.append("targets must be non-empty")
        if not self.effect_vars:
            problems.append("effect_vars must be non-empty")
        for v in (*self.targets, *self.effect_vars):
            if v not in sheaf.graph.node_index:
                problems.append(f"unknown node {v!r}")
        if len(set(self.targets)) != len(self.targets):
            problems.append("targets must be distinct")
        cfg = self.config
        if cfg.mode not in ("exact", "sampled"):
            problems.append(f"unknown mode {cfg.mode!r}")
        if cfg.read not in ("horizon", "stabilized"):
            problems.append(f"unknown read mode {cfg.read!r}")
        if cfg.horizon < 0:
            problems.append("horizon must be non-negative")
        if cfg.samples < 1:
            problems.append("samples must be positive")
        if isinstance(self.distribution, str):
            if self.distribution != "uniform":
                problems.append(f"unknown distribution {self.distribution!r}")
        else:
            w = np.asarray(self.distribution)
            if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
                problems.append("explicit intervention weights must be non-negative and sum to 1 within 1e-12")
        if problems:
            raise ValidationError("; ".join(problems), problems)


def do_space_size(spec: InterventionSpec, sheaf: Sheaf) -> int:
    return math.prod(sheaf.node_card(v) for v in spec.targets)


def enumerate_interventions(spec: InterventionSpec, sheaf: Sheaf, cap: int | None = None) -> list[tuple[int, ...]]:
    """Every joint assignment of the targets, lexicographic in target order."""
    cap = spec.config.cap if cap is None else cap
    size = do_space_size(spec, sheaf)
    if size > cap:
        raise CapExceededError(
            f"intervention space has {size} assignments, above the cap of {cap}; use sampled mode",
            required=size,
            cap=cap,
        )
    return list(product_space([sheaf.node_card(v) for v in spec.targets]))


@dataclass(frozen=True, eq=False)
class JointDistribution:
    do_space: tuple[tuple[int, ...], ...]
    effect_space: tuple[tuple[int, ...], ...]
    probabilities: np.ndarray
    do_weights: np.ndarray | None = None

    def check(self) -> None:
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.shape != (len(self.do_space), len(self.effect_space)):
            raise InvalidDistributionError("probability matrix shape does not match the spaces")
        if (p < 0).any() or not np.isfinite(p).all():
            raise InvalidDistributionError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise InvalidDistributionError(f"joint probabilities sum to {p.sum()!r}, not 1")
        if self.do_weights is not None and np.abs(p.sum(axis=1) - self.do_weights).max() > 1e-9:
            raise InvalidDistributionError("row marginals differ from the intervention distribution")


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def mutual_information(joint: JointDistribution | np.ndarray) -> float:
    """Plug-in Shannon mutual information of a joint table, in bits."""
    if not isinstance(joint, JointDistribution):
        p = np.asarray(joint, dtype=np.float64)
        joint = JointDistribution(tuple((i,) for i in range(p.shape[0])), tuple((j,) for j in range(p.shape[1])), p)
    joint.check()
    p = np.asarray(joint.probabilities, dtype=np.float64)
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float((p[nz] * np.log2(p[nz] / (px @ py)[nz])).sum())
    return max(mi, 0.0) if mi > -BOUND_TOL else mi


@dataclass
class EIResult:
    ei_bits: float
    determinism_bits: float
    degeneracy_bits: float
    n_interventions: int
    n_samples_per_intervention: int
    exact: bool
    n_effects: int = 0
    joint: JointDistribution | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "ei_bits": round(self.ei_bits, 12),
            "determinism_bits": round(self.determinism_bits, 12),
            "degeneracy_bits": round(self.degeneracy_bits, 12),
            "n_interventions": self.n_interventions,
            "n_samples_per_intervention": self.n_samples_per_intervention,
            "n_effects": self.n_effects,
            "exact": self.exact,
        }


def _start_rows(sheaf: Sheaf, baseline: Section, target_idx: Sequence[int], assignments: np.ndarray) -> np.ndarray:
    rows = np.repeat(baseline.node_row(sheaf)[None, :], len(assignments), axis=0)
    if len(target_idx):
        rows[:, list(target_idx)] = assignments
    return rows


def intervene_and_evolve(
    sheaf: Sheaf,
    rule: UpdateRule,
    baseline: Section,
    assignment: Mapping[NodeId, int],
    horizon: int = 1,
    rng: np.random.Generator | None = None,
    effect_vars: Sequence[NodeId] | None = None,
    sticky: bool = False,
) -> tuple[int, ...]:
    """Apply do(assignment) to a copy of ``baseline``, evolve, and read the effect nodes.

    The assigned values replace whatever the targets' kernels would have
    produced, and edges are re-derived from tails. All kernels, the targets'
    included, then run for ``horizon`` steps; with ``sticky`` the targets stay
    clamped throughout. One trajectory is sampled when kernels are stochastic.
    """
    check_section(sheaf, baseline)
    nidx = sheaf.graph.node_index
    targets = list(assignment)
    target_idx = [nidx[v] for v in targets]
    values = np.asarray([[int(assignment[v]) for v in targets]], dtype=np.int64)
    nodes = _start_rows(sheaf, baseline, target_idx, values)
    edges = sheaf.tail_force(nodes)
    clamp = dict(zip(target_idx, values[0].tolist())) if sticky else {}
    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(horizon):
        u = None if rule.deterministic else rng.random((1, len(sheaf.nodes)))
        nodes, edges = advance(sheaf, rule, nodes, edges, clamp, None, u)
    effect_vars = list(sheaf.nodes) if effect_vars is None else list(effect_vars)
    return tuple(int(nodes[0, nidx[v]]) for v in effect_vars)


def _exact_rows(sheaf, rule, start, frozen, horizon, max_support):
    """Analytic outcome distributions for a batch of start states.

    Returns ``(ids, states, probs, overflow)``: weighted final states tagged
    with the index of their start row, plus the start rows whose support grew
    beyond ``max_support`` and were dropped.
    """
    n_start = len(start)
    ids = np.arange(n_start)
    probs = np.ones(n_start)
    states = start.copy()
    overflow = np.zeros(n_start, dtype=bool)
    frozen = set(frozen)
    for _ in range(horizon):
        edges = sheaf.tail_force(states)
        parent = np.arange(len(states))
        nxt = states.copy()
        q = probs.copy()
        for i, v in enumerate(sheaf.nodes):
            if i in frozen:
                continue
            kernel = rule.kernels[v]
            ins = sheaf.incoming_index[i]
            rows = kernel.table[(states[:, i], *(edges[:, k] for k in ins))]
            undefined = np.isnan(rows[:, 0])
            if undefined.any():
                j = int(undefined.argmax())
                raise TotalityError(v, int(states[j, i]), [int(edges[j, k]) for k in ins])
            if kernel.deterministic:
                nxt[:, i] = rows.argmax(axis=1)[parent]
                continue
            sub = rows[parent]
            r, c = np.nonzero(sub > 0)
            parent, q, nxt = parent[r], q[r] * sub[r, c], nxt[r]
            nxt[:, i] = c
            counts = np.bincount(ids[parent], minlength=n_start)
            if counts.max() > max_support:
                overflow |= counts > max_support
                keep = ~overflow[ids[parent]]
                parent, q, nxt = parent[keep], q[keep], nxt[keep]
        key = np.column_stack([ids[parent], nxt])
        if len(key) == 0:
            ids, states, probs = key[:, 0], key[:, 1:], q
            break
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        probs = np.zeros(len(uniq))
        np.add.at(probs, inv.reshape(-1), q)
        ids, states = uniq[:, 0], uniq[:, 1:]
    return ids, states, probs, overflow


def _sampled_rows(sheaf, rule, start_row, clamp, horizon, samples, rng):
    states = np.repeat(start_row[None, :], samples, axis=0)
    edges = sheaf.tail_force(states)
    n = len(sheaf.nodes)
    for _ in range(horizon):
        states, edges = advance(sheaf, rule, states, edges, clamp, None, rng.random((samples, n)))
    return states


def _stabilized_rows(sheaf, rule, start_row, clamp_map, cfg, runs, rng):
    out = []
    for _ in range(runs):
        sec = sheaf.section_from_nodes(start_row)
        res = stabilize(sheaf, rule, sec, clamp_map or None, cfg.stabilize_max_iters, rng)
        out.append(res.section.node_row(sheaf))
    return np.asarray(out, dtype=np.int64)


def _intervention_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _effect_chunk(sheaf, rule, baseline, spec, assignments, indices):
    """Conditional effect distributions for a slice of interventions.

    Returns a list of ``{effect_tuple: prob}`` aligned with ``indices`` and a
    flag telling whether every row was computed exactly.
    """
    cfg = spec.config
    nidx = sheaf.graph.node_index
    target_idx = [nidx[v] for v in spec.targets]
    effect_idx = [nidx[v] for v in spec.effect_vars]
    chunk = np.asarray([assignments[i] for i in indices], dtype=np.int64).reshape(len(indices), len(target_idx))
    start = _start_rows(sheaf, baseline, target_idx, chunk)
    frozen = target_idx if cfg.sticky else []
    rows: list[dict | None] = [None] * len(indices)
    exact = cfg.mode == "exact"

    if cfg.read == "horizon" and exact:
        ids, states, probs, overflow = _exact_rows(sheaf, rule, start, frozen, cfg.horizon, cfg.max_support)
        for k in range(len(indices)):
            if not overflow[k]:
                rows[k] = {}
        for k, st, p in zip(ids.tolist(), states[:, effect_idx].tolist(), probs.tolist()):
            if not overflow[k]:
                key = tuple(st)
                rows[k][key] = rows[k].get(key, 0.0) + p
    elif cfg.read == "stabilized" and exact and rule.deterministic:
        for k in range(len(indices)):
            clamp = dict(zip(spec.targets, chunk[k].tolist())) if cfg.sticky else None
            final = _stabilized_rows(sheaf, rule, start[k], clamp, cfg, 1, None)
            rows[k] = {tuple(final[0, effect_idx].tolist()): 1.0}

    for k, index in enumerate(indices):
        if rows[k] is not None:
            continue
        exact = False
        rng = _intervention_rng(cfg.seed, index)
        if cfg.read == "horizon":
            clamp = dict(zip(target_idx, chunk[k].tolist())) if cfg.sticky else {}
            finals = _sampled_rows(sheaf, rule, start[k], clamp, cfg.horizon, cfg.samples, rng)
        else:
            clamp = dict(zip(spec.targets, chunk[k].tolist())) if cfg.sticky else None
            finals = _stabilized_rows(sheaf, rule, start[k], clamp, cfg, cfg.samples, rng)
        uniq, counts = np.unique(finals[:, effect_idx], axis=0, return_counts=True)
        rows[k] = {tuple(u): c / cfg.samples for u, c in zip(uniq.tolist(), counts.tolist())}
    return rows, exact


def parallel_map(fn, items, jobs: int = 1):
    """Ordered map, optionally across joblib workers. Output order never depends on ``jobs``."""
    items = list(items)
    if jobs == 1 or len(items) <= 1:
        return [fn(*args) for args in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(fn)(*args) for args in items)


def _chunks(n: int, jobs: int) -> list[list[int]]:
    if jobs == 1 or n <= 1:
        return [list(range(n))]
    size = max(1, math.ceil(n / (abs(jobs) * 4)))
    return [list(range(i, min(n, i + size))) for i in range(0, n, size)]


def effective_information(
    sheaf: Sheaf,
    rule: UpdateRule,
    baseline: Section,
    spec: InterventionSpec,
    jobs: int = 1,
) -> EIResult:
    """EI = I(X_do; X_effect) under the intervention distribution of ``spec``."""
    spec.validate(sheaf)
    check_section(sheaf, baseline)
    cfg = spec.config
    size = do_space_size(spec, sheaf)
    if size <= cfg.cap:
        assignments = enumerate_interventions(spec, sheaf)
    elif cfg.mode == "sampled" and isinstance(spec.distribution, str):
        rng = _intervention_rng(cfg.seed, 1 << 62)
        cards = [sheaf.node_card(v) for v in spec.targets]
        draws = np.stack([rng.integers(0, c, cfg.intervention_samples) for c in cards], axis=1)
        assignments = [tuple(r) for r in np.unique(draws, axis=0).tolist()]
    else:
        raise CapExceededError(
            f"intervention space has {size} assignments, above the cap of {cfg.cap}; use sampled mode",
            required=size,
            cap=cfg.cap,
        )
    n_do = len(assignments)
    if isinstance(spec.distribution, str):
        weights = np.full(n_do, 1.0 / n_do)
    else:
        weights = np.asarray(spec.distribution, dtype=np.float64)
        if len(weights) != n_do:
            raise ValidationError(f"{len(weights)} intervention weights given for {n_do} interventions")

    parts = parallel_map(
        _effect_chunk,
        [(sheaf, rule, baseline, spec, assignments, idx) for idx in _chunks(n_do, jobs)],
        jobs,
    )
    conditional = [row for rows, _ in parts for row in rows]
    exact = all(flag for _, flag in parts)

    effect_space = sorted({e for row in conditional for e in row})
    col = {e: j for j, e in enumerate(effect_space)}
    cond = np.zeros((n_do, len(effect_space)))
    for i, row in enumerate(conditional):
        for e, p in row.items():
            cond[i, col[e]] = p
    joint = JointDistribution(tuple(assignments), tuple(effect_space), cond * weights[:, None], weights)
    ei = mutual_information(joint)

    log_do = math.log2(n_do)
    row_entropy = np.array([_entropy(r) for r in cond])
    determinism = log_do - float(weights @ row_entropy)
    degeneracy = log_do - _entropy(cond.mean(axis=0))

    if ei > log_do + BOUND_TOL or ei > math.log2(max(len(effect_space), 1)) + BOUND_TOL or ei < -BOUND_TOL:
        raise InvariantBreachError(f"EI {ei} violates its information bounds")
    return EIResult(
        ei_bits=ei,
        determinism_bits=determinism,
        degeneracy_bits=degeneracy,
        n_interventions=n_do,
        n_samples_per_intervention=0 if exact else cfg.samples,
        exact=exact,
        n_effects=len(effect_space),
        joint=joint,
    )


@dataclass
class PairwiseEI:
    nodes: tuple[NodeId, ...]
    matrix: np.ndarray

    def __getitem__(self, pair: tuple[NodeId, NodeId]) -> float:
        i, j = (self.nodes.index(v) for v in pair)
        return float(self.matrix[i, j])

    def to_csv(self) -> str:
        lines = ["source," + ",".join(self.nodes)]
        for v, row in zip(self.nodes, self.matrix):
            lines.append(v + "," + ",".join(f"{x:.12f}" for x in row))
        return "\n".join(lines) + "\n"


def _pair_ei(sheaf, rule, baseline, config, source, target):
    return effective_information(sheaf, rule, baseline, config.spec([source], [target])).ei_bits


def pairwise_ei_matrix(
    sheaf: Sheaf,
    rule: UpdateRule,
    baseline: Section,
    horizon: int | None = None,
    config: EIConfig | None = None,
    jobs: int = 1,
) -> PairwiseEI:
    """``M[i, j]`` = EI from a single-node intervention on ``i`` to node ``j``, diagonal included."""
    config = config or EIConfig()
    if horizon is not None:
        config = replace(config, horizon=horizon)
    nodes = sheaf.nodes
    pairs = [(sheaf, rule, baseline, config, a, b) for a in nodes for b in nodes]
    values = parallel_map(_pair_ei, pairs, jobs)
    return PairwiseEI(tuple(nodes), np.asarray(values, dtype=np.float64).reshape(len(nodes), len(nodes)))
