"""JSON file formats: models, failure scenarios, EI requests and groupings.

Malformed documents raise ``ParseError``; documents that parse but describe an
inconsistent object raise a ``ValidationError`` whose violations carry the
line of the offending cell.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .causal import EIConfig, InterventionSpec
from .dynamics import FailureEvent, NodeKernel, ScenarioConfig, UpdateRule, input_cards
from .emergence import MacroGrouping, SearchConfig
from .errors import InvalidEventError, ParseError, ValidationError
from .model import (
    AttributedGraph,
    Edge,
    RestrictionMap,
    Section,
    Sheaf,
    StateSpace,
    ValidationReport,
    Violation,
    validate_sheaf,
)


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def load_json(text: str, source: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None


class _Locator:
    """Maps a cell id back to the line that declares it."""

    def __init__(self, text: str):
        self.text = text

    def line(self, cell: str) -> int | None:
        m = re.search(r'"id"\s*:\s*' + re.escape(json.dumps(cell)), self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None


def _fail(source: str, path: str, message: str):
    raise ParseError(f"{source}: {path}: {message}")


def _get(obj: Mapping, key: str, kind, source: str, path: str, required: bool = True, default=None):
    if key not in obj:
        if required:
            _fail(source, path, f"missing field {key!r}")
        return default
    value = obj[key]
    if kind is int and isinstance(value, bool):
        _fail(source, f"{path}.{key}", "expected an integer")
    if not isinstance(value, kind):
        names = {list: "a list", dict: "an object", str: "a string", int: "an integer", bool: "a boolean"}
        expected = names.get(kind, " or ".join(names.get(k, k.__name__) for k in kind) if isinstance(kind, tuple) else kind.__name__)
        _fail(source, f"{path}.{key}", f"expected {expected}")
    return value


def _check_keys(obj: Mapping, allowed: set[str], source: str, path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        _fail(source, path, f"unknown field(s) {', '.join(map(repr, unknown))}")


def _labels(raw: list, source: str, path: str) -> list[str]:
    for i, label in enumerate(raw):
        if isinstance(label, bool) or not isinstance(label, (str, int)):
            _fail(source, f"{path}[{i}]", "state labels must be strings or integers")
    return [str(label) for label in raw]


def _indices(raw: list, source: str, path: str) -> list[int]:
    for i, x in enumerate(raw):
        if isinstance(x, bool) or not isinstance(x, int):
            _fail(source, f"{path}[{i}]", "map entries must be integer indices")
    return list(raw)


# ---------------------------------------------------------------- models


@dataclass
class ModelFile:
    sheaf: Sheaf
    rule: UpdateRule
    initial: Section | None = None
    meta: dict = field(default_factory=dict)
    report: ValidationReport = field(default_factory=ValidationReport)


def _kernel_from_json(raw: dict, own: int, cards: tuple[int, ...], node: str) -> NodeKernel:
    kind = raw.get("kind")
    if kind == "identity":
        return NodeKernel.identity(own, cards)
    if kind != "table":
        raise ValidationError(f"node {node!r}: unknown kernel kind {kind!r}", [("BAD_KERNEL", node, f"unknown kernel kind {kind!r}")])
    rows = raw.get("next")
    expected = own * int(np.prod(cards, dtype=np.int64))
    if not isinstance(rows, list) or len(rows) != expected:
        got = len(rows) if isinstance(rows, list) else "no"
        msg = f"kernel of {node!r} needs {expected} rows (own state x incoming edge states), got {got}"
        raise ValidationError(msg, [("BAD_KERNEL", node, msg)])
    table = np.full((expected, own), np.nan)
    for i, entry in enumerate(rows):
        if entry is None:
            continue
        if isinstance(entry, int) and not isinstance(entry, bool):
            if not 0 <= entry < own:
                msg = f"kernel of {node!r} row {i} points at state {entry} outside the {own}-state stalk"
                raise ValidationError(msg, [("BAD_KERNEL", node, msg)])
            table[i, entry] = 1.0
            table[i, np.arange(own) != entry] = 0.0
        elif isinstance(entry, list) and len(entry) == own and all(
            isinstance(p, (int, float)) and not isinstance(p, bool) for p in entry
        ):
            table[i] = entry
        else:
            msg = f"kernel of {node!r} row {i} must be a state index, a probability list of length {own}, or null"
            raise ValidationError(msg, [("BAD_KERNEL", node, msg)])
    try:
        return NodeKernel(table.reshape(own, *cards, own))
    except ValueError as exc:
        raise ValidationError(f"kernel of {node!r}: {exc}", [("BAD_KERNEL", node, str(exc))]) from None


def _kernel_to_json(kernel: NodeKernel):
    if kernel.is_identity:
        return {"kind": "identity"}
    rows = []
    for row in kernel.table.reshape(-1, kernel.own_card):
        if np.isnan(row[0]):
            rows.append(None)
        elif np.count_nonzero(row) == 1 and row.max() == 1.0:
            rows.append(int(np.argmax(row)))
        else:
            rows.append([float(p) for p in row])
    return {"kind": "table", "next": rows}


def _render(report_items, locator: _Locator, source: str) -> list[dict]:
    out = []
    for code, cell, message in report_items:
        line = locator.line(cell)
        where = f"{source}:{line}" if line else source
        out.append({"code": code, "cell": cell, "line": line, "message": message, "where": where})
    return out


def _raise_validation(items, locator: _Locator, source: str):
    rendered = _render(items, locator, source)
    text = "\n".join(f"{r['where']}: {r['code']} {r['message']}" for r in rendered)
    raise ValidationError(f"{len(rendered)} violation(s)\n{text}", rendered)


def parse_model(text: str, source: str = "<model>", check: bool = True) -> ModelFile:
    """Parse a model document.

    With ``check=False`` structural violations are returned in
    ``ModelFile.report`` instead of raised, and kernels and the initial state
    are only built when the sheaf is valid.
    """
    doc = load_json(text, source)
    if not isinstance(doc, dict):
        _fail(source, "$", "a model must be a JSON object")
    _check_keys(doc, {"nodes", "edges", "initial", "meta"}, source, "$")
    locator = _Locator(text)
    nodes_raw = _get(doc, "nodes", list, source, "$")
    edges_raw = _get(doc, "edges", list, source, "$", required=False, default=[])

    node_ids, node_stalks, node_attrs, kernel_raw = [], {}, {}, {}
    label_problems = []
    for i, nd in enumerate(nodes_raw):
        path = f"nodes[{i}]"
        if not isinstance(nd, dict):
            _fail(source, path, "expected an object")
        _check_keys(nd, {"id", "stalk", "attrs", "kernel"}, source, path)
        nid = _get(nd, "id", str, source, path)
        labels = _labels(_get(nd, "stalk", list, source, path), source, f"{path}.stalk")
        node_ids.append(nid)
        try:
            node_stalks[nid] = StateSpace(tuple(labels))
        except ValueError as exc:
            label_problems.append(("BAD_STALK", nid, str(exc)))
        node_attrs[nid] = _get(nd, "attrs", dict, source, path, required=False, default={})
        if "kernel" in nd:
            kernel_raw[nid] = _get(nd, "kernel", dict, source, path)

    edges, edge_stalks, tails, heads, edge_attrs = [], {}, {}, {}, {}
    for i, ed in enumerate(edges_raw):
        path = f"edges[{i}]"
        if not isinstance(ed, dict):
            _fail(source, path, "expected an object")
        _check_keys(ed, {"id", "source", "target", "stalk", "tail_map", "head_map", "attrs"}, source, path)
        eid = _get(ed, "id", str, source, path)
        src = _get(ed, "source", str, source, path)
        dst = _get(ed, "target", str, source, path)
        labels = _labels(_get(ed, "stalk", list, source, path), source, f"{path}.stalk")
        tail = _indices(_get(ed, "tail_map", list, source, path), source, f"{path}.tail_map")
        head = _indices(_get(ed, "head_map", list, source, path), source, f"{path}.head_map")
        edges.append(Edge(eid, src, dst))
        edge_attrs[eid] = _get(ed, "attrs", dict, source, path, required=False, default={})
        try:
            space = StateSpace(tuple(labels))
        except ValueError as exc:
            label_problems.append(("BAD_STALK", eid, str(exc)))
            continue
        edge_stalks[eid] = space
        # a dangling endpoint still gets a map so that its other checks run
        tails[eid] = RestrictionMap(node_stalks.get(src, StateSpace.of_size(len(tail) or 1)), space, tail)
        heads[eid] = RestrictionMap(node_stalks.get(dst, StateSpace.of_size(len(head) or 1)), space, head)

    graph = AttributedGraph(tuple(node_ids), tuple(edges), node_attrs, edge_attrs)
    sheaf = Sheaf(graph, node_stalks, edge_stalks, tails, heads)
    report = validate_sheaf(sheaf)
    if label_problems:
        bad = {cell for _, cell, _ in label_problems}
        kept = [v for v in report if not (v.code == "MISSING_STALK" and v.cell in bad)]
        report.violations = [Violation(*p) for p in label_problems] + kept
    meta = _get(doc, "meta", dict, source, "$", required=False, default={})
    if not report.ok:
        if check:
            _raise_validation([(v.code, v.cell, v.message) for v in report], locator, source)
        return ModelFile(sheaf, UpdateRule({}), None, meta, report)

    kernels = {}
    for v in sheaf.nodes:
        cards = input_cards(sheaf, v)
        if v in kernel_raw:
            try:
                kernels[v] = _kernel_from_json(kernel_raw[v], sheaf.node_card(v), cards, v)
            except ValidationError as exc:
                _raise_validation(exc.violations, locator, source)
        else:
            kernels[v] = NodeKernel.identity(sheaf.node_card(v), cards)
    rule = UpdateRule(kernels)

    initial = None
    if "initial" in doc:
        initial = _initial_from_json(_get(doc, "initial", dict, source, "$"), sheaf, locator, source)
    return ModelFile(sheaf, rule, initial, meta, report)


def _initial_from_json(raw: dict, sheaf: Sheaf, locator: _Locator, source: str) -> Section:
    problems = []
    states = {}
    for v in sheaf.nodes:
        if v not in raw:
            problems.append(("BAD_INITIAL", v, f"initial state of node {v!r} is missing"))
            continue
        label = raw[v]
        try:
            states[v] = sheaf.node_stalks[v].index(label)
        except ValueError:
            problems.append(("BAD_INITIAL", v, f"initial label {label!r} is not in the stalk of {v!r}"))
    for v in sorted(set(raw) - set(sheaf.nodes)):
        problems.append(("BAD_INITIAL", v, f"initial state given for unknown node {v!r}"))
    if problems:
        _raise_validation(problems, locator, source)
    return sheaf.section_from_nodes(states)


def model_to_dict(sheaf: Sheaf, rule: UpdateRule | None = None, initial: Section | None = None, meta: dict | None = None) -> dict:
    nodes = []
    for v in sheaf.nodes:
        entry = {"id": v, "stalk": list(sheaf.node_stalks[v].labels), "attrs": dict(sheaf.graph.node_attrs.get(v, {}))}
        if rule is not None and v in rule.kernels:
            entry["kernel"] = _kernel_to_json(rule.kernels[v])
        nodes.append(entry)
    edges = [
        {
            "id": e.id,
            "source": e.source,
            "target": e.target,
            "stalk": list(sheaf.edge_stalks[e.id].labels),
            "tail_map": list(sheaf.tail_maps[e.id].table),
            "head_map": list(sheaf.head_maps[e.id].table),
            "attrs": dict(sheaf.graph.edge_attrs.get(e.id, {})),
        }
        for e in sheaf.edges
    ]
    doc = {"nodes": nodes, "edges": edges}
    if initial is not None:
        doc["initial"] = {v: sheaf.node_stalks[v].labels[initial.node_states[v]] for v in sheaf.nodes}
    if meta:
        doc["meta"] = meta
    return doc


def dump_model(sheaf: Sheaf, rule: UpdateRule | None = None, initial: Section | None = None, meta: dict | None = None) -> str:
    return dumps(model_to_dict(sheaf, rule, initial, meta))


def parse_model_file(path: str | Path, check: bool = True) -> ModelFile:
    return parse_model(read_text(path), str(path), check)


# ---------------------------------------------------------------- scenarios


def _resolve_state(sheaf: Sheaf, target: str, state) -> int:
    if target in sheaf.node_stalks:
        space = sheaf.node_stalks[target]
    elif target in sheaf.edge_stalks:
        space = sheaf.edge_stalks[target]
    else:
        raise InvalidEventError(f"failure target {target!r} is neither a node nor an edge")
    if isinstance(state, int) and not isinstance(state, bool):
        if not 0 <= state < space.cardinality:
            raise InvalidEventError(f"failed_state {state} is outside the stalk of {target!r}")
        return state
    try:
        return space.index(state)
    except ValueError:
        raise InvalidEventError(f"failed_state {state!r} is not a label of {target!r}") from None


def parse_scenario(text: str, sheaf: Sheaf, source: str = "<scenario>") -> ScenarioConfig:
    """Scenario document: ``{horizon, seed, stabilize_max_iters, failures: [...]}``.

    ``failed_state`` may be a stalk index or a label.
    """
    doc = load_json(text, source)
    if not isinstance(doc, dict):
        _fail(source, "$", "a scenario must be a JSON object")
    _check_keys(doc, {"horizon", "seed", "stabilize_max_iters", "failures", "meta"}, source, "$")
    horizon = _get(doc, "horizon", int, source, "$", required=False, default=0)
    seed = _get(doc, "seed", int, source, "$", required=False, default=0)
    max_iters = _get(doc, "stabilize_max_iters", int, source, "$", required=False, default=100)
    events = []
    for i, ev in enumerate(_get(doc, "failures", list, source, "$", required=False, default=[])):
        path = f"failures[{i}]"
        if not isinstance(ev, dict):
            _fail(source, path, "expected an object")
        _check_keys(ev, {"target", "failed_state", "at_step", "sticky"}, source, path)
        target = _get(ev, "target", str, source, path)
        state = _get(ev, "failed_state", (int, str), source, path)
        at_step = _get(ev, "at_step", int, source, path, required=False, default=0)
        sticky = _get(ev, "sticky", bool, source, path, required=False, default=True)
        events.append(FailureEvent(target, _resolve_state(sheaf, target, state), at_step, sticky))
    try:
        return ScenarioConfig(horizon=horizon, seed=seed, failures=tuple(events), stabilize_max_iters=max_iters)
    except ValueError as exc:
        raise ValidationError(f"{source}: {exc}") from None


def scenario_to_dict(config: ScenarioConfig, sheaf: Sheaf, meta: dict | None = None) -> dict:
    def label(ev):
        stalk = sheaf.node_stalks.get(ev.target) or sheaf.edge_stalks[ev.target]
        return stalk.labels[ev.failed_state]

    doc = {
        "horizon": config.horizon,
        "seed": config.seed,
        "stabilize_max_iters": config.stabilize_max_iters,
        "failures": [
            {"target": ev.target, "failed_state": label(ev), "at_step": ev.at_step, "sticky": ev.sticky}
            for ev in config.failures
        ],
    }
    if meta:
        doc["meta"] = meta
    return doc


# ---------------------------------------------------------------- EI requests


@dataclass
class EIRequest:
    """An EI request document, with search options for ``emerge --search``."""

    config: EIConfig
    targets: tuple[str, ...] | None = None
    effect_vars: tuple[str, ...] | None = None
    distribution: str | tuple[float, ...] = "uniform"
    search: SearchConfig = field(default_factory=SearchConfig)

    def spec(self) -> InterventionSpec:
        if self.targets is None or self.effect_vars is None:
            raise ValidationError("an EI request needs both 'targets' and 'effect_vars'")
        return InterventionSpec(self.targets, self.effect_vars, self.distribution, self.config)


_EI_INT_FIELDS = ("horizon", "samples", "seed", "stabilize_max_iters", "max_support", "cap", "intervention_samples")


def parse_ei_request(text: str, source: str = "<spec>") -> EIRequest:
    """EI request: ``{targets, effect_vars, horizon, mode, samples, seed, distribution}``.

    Optional extras: ``sticky``, ``read``, ``stabilize_max_iters``,
    ``max_support``, ``cap``, ``intervention_samples`` and a ``search``
    object with ``mode``, ``variant``, ``max_block_size``.
    """
    doc = load_json(text, source)
    if not isinstance(doc, dict):
        _fail(source, "$", "an EI request must be a JSON object")
    _check_keys(
        doc,
        {"targets", "effect_vars", "mode", "distribution", "sticky", "read", "search", *_EI_INT_FIELDS},
        source,
        "$",
    )
    changes = {k: _get(doc, k, int, source, "$") for k in _EI_INT_FIELDS if k in doc}
    if "mode" in doc:
        changes["mode"] = _get(doc, "mode", str, source, "$")
    if "read" in doc:
        changes["read"] = _get(doc, "read", str, source, "$")
    if "sticky" in doc:
        changes["sticky"] = _get(doc, "sticky", bool, source, "$")
    config = EIConfig(**changes)

    def names(key):
        if key not in doc:
            return None
        raw = _get(doc, key, list, source, "$")
        if not all(isinstance(x, str) for x in raw):
            _fail(source, f"$.{key}", "expected a list of node ids")
        return tuple(raw)

    distribution = doc.get("distribution", "uniform")
    if isinstance(distribution, list):
        if not all(isinstance(w, (int, float)) and not isinstance(w, bool) for w in distribution):
            _fail(source, "$.distribution", "weights must be numbers")
        distribution = tuple(float(w) for w in distribution)
    elif not isinstance(distribution, str):
        _fail(source, "$.distribution", "expected \"uniform\" or a list of weights")

    search = SearchConfig(ei=config)
    if "search" in doc:
        raw = _get(doc, "search", dict, source, "$")
        _check_keys(raw, {"mode", "variant", "max_block_size", "exact_cap", "top_k"}, source, "$.search")
        opts = {}
        for key, kind in (("mode", str), ("variant", str), ("max_block_size", int), ("exact_cap", int), ("top_k", int)):
            if key in raw:
                opts[key] = _get(raw, key, kind, source, "$.search")
        search = SearchConfig(ei=config, **opts)
    return EIRequest(config, names("targets"), names("effect_vars"), distribution, search)


# ---------------------------------------------------------------- groupings


def parse_grouping(text: str, sheaf: Sheaf, source: str = "<grouping>") -> MacroGrouping:
    """Grouping document: ``{"blocks": [[node, ...], ...], "names": [...]}``; unlisted nodes stay singletons."""
    doc = load_json(text, source)
    if not isinstance(doc, dict):
        _fail(source, "$", "a grouping must be a JSON object")
    _check_keys(doc, {"blocks", "names"}, source, "$")
    blocks = _get(doc, "blocks", list, source, "$")
    for i, block in enumerate(blocks):
        if not isinstance(block, list) or not block or not all(isinstance(v, str) for v in block):
            _fail(source, f"$.blocks[{i}]", "expected a non-empty list of node ids")
    names = _get(doc, "names", list, source, "$", required=False)
    if names is not None and len(names) != len(blocks):
        _fail(source, "$.names", "needs one name per block")
    return MacroGrouping.from_blocks(sheaf, blocks, names)
