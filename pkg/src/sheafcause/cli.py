"""Command-line entry point.

Every command writes a canonical JSON report (or CSV with ``--format csv``)
that embeds the tool version, the seed and the SHA-256 of each input file.
Exit codes: 0 ok, 1 parse error, 2 validation error, 3 cap exceeded,
4 kernel totality error, 5 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _stringio
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .causal import EIConfig, effective_information, pairwise_ei_matrix
from .domains import BUILDERS, DomainTemplate
from .dynamics import FailureEvent, ScenarioConfig, run_scenario
from .emergence import SearchConfig, causal_resilience_index, search_macro_nodes
from .errors import ParseError, SheafCauseError, ValidationError
from .fixtures import REFERENCE
from .io import (
    EIRequest,
    ModelFile,
    dump_model,
    dumps,
    parse_ei_request,
    parse_grouping,
    parse_model,
    parse_scenario,
    read_text,
    scenario_to_dict,
)
from .model import Section, enumerate_global_sections, is_global_section

TOOL = "sheafcause"
MAX_SEED = (1 << 64) - 1


def _seed(text: str) -> int:
    try:
        value = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _jobs(text: str) -> int:
    value = int(text)
    if value == 0 or value < -1:
        raise argparse.ArgumentTypeError("jobs must be a positive integer or -1 for all cores")
    return value


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def verify_report(report: dict) -> list[str]:
    """Names of recorded inputs whose current file contents no longer match the report."""
    bad = []
    for name, entry in sorted(report.get("inputs", {}).items()):
        path = Path(entry["path"])
        if not path.exists() or sha256_file(path) != entry["sha256"]:
            bad.append(name)
    return bad


class _Run:
    """Input bookkeeping for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.inputs: dict[str, dict] = {}

    def text(self, name: str, path: str) -> str:
        body = read_text(path)
        self.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}
        return body

    def model(self, check: bool = True) -> ModelFile:
        if not self.args.model:
            raise ValidationError(f"{self.args.command} needs --model")
        return parse_model(self.text("model", self.args.model), self.args.model, check)

    def request(self) -> EIRequest | None:
        if not getattr(self.args, "spec", None):
            return None
        return parse_ei_request(self.text("spec", self.args.spec), self.args.spec)

    def envelope(self, seed: int | None, result: dict) -> dict:
        return {
            "tool": TOOL,
            "version": __version__,
            "command": self.args.command,
            "seed": seed,
            "inputs": self.inputs,
            "result": result,
        }


def _baseline(model: ModelFile) -> Section:
    """The model's declared initial state, else its first global section."""
    if model.initial is not None:
        return model.initial
    found = enumerate_global_sections(model.sheaf, limit=1)
    if not len(found):
        raise ValidationError("model declares no initial state and has no global section to start from")
    return found[0]


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = _stringio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _r(x: float) -> float:
    return round(float(x), 12)


# ---------------------------------------------------------------- commands


def cmd_validate(run: _Run):
    model = run.model(check=False)
    violations = [
        {"code": v.code, "cell": v.cell, "message": v.message}
        for v in model.report
    ]
    result = {
        "ok": model.report.ok,
        "n_nodes": len(model.sheaf.graph.nodes),
        "n_edges": len(model.sheaf.graph.edges),
        "violations": violations,
    }
    if model.report.ok and model.initial is not None:
        result["initial_is_global_section"] = is_global_section(model.sheaf, model.initial)
    summary = "valid" if model.report.ok else f"{len(violations)} violation(s)"
    lines = [f"{v['code']} {v['cell']}: {v['message']}" for v in violations]
    table = _csv(["code", "cell", "message"], [[v["code"], v["cell"], v["message"]] for v in violations])
    code = 0 if model.report.ok else ValidationError.exit_code
    return run.envelope(None, result), table, "\n".join([f"validate: {summary}", *lines]), code


def cmd_sections(run: _Run):
    model = run.model()
    sheaf = model.sheaf
    limit = run.args.limit if run.args.limit is not None else 10_000
    found = enumerate_global_sections(sheaf, limit=limit)
    listed = [s.labels(sheaf) for s in found]
    result = {"count": len(found), "truncated": found.truncated, "limit": limit, "sections": listed}
    cells = [*sheaf.nodes, *(e.id for e in sheaf.edges)]
    rows = [[*s["nodes"].values(), *s["edges"].values()] for s in listed]
    more = " (truncated)" if found.truncated else ""
    return run.envelope(None, result), _csv(cells, rows), f"sections: {len(found)} global section(s){more}", 0


def cmd_simulate(run: _Run):
    model = run.model()
    sheaf = model.sheaf
    if not run.args.scenario:
        raise ValidationError("simulate needs --scenario")
    scenario = parse_scenario(run.text("scenario", run.args.scenario), sheaf, run.args.scenario)
    if run.args.seed is not None:
        scenario = replace(scenario, seed=run.args.seed)
    traj = run_scenario(sheaf, model.rule, _baseline(model), scenario)
    steps = [
        {"t": t, "residual": res, **sec.labels(sheaf)}
        for t, (sec, res) in enumerate(zip(traj.sections, traj.residuals))
    ]
    settled = traj.stabilized
    result = {
        "horizon": scenario.horizon,
        "steps": steps,
        "events": [
            {"step": t, "target": ev.target, "failed_state": ev.failed_state, "sticky": ev.sticky}
            for t, ev in traj.events_applied
        ],
        "stabilized": {
            **settled.section.labels(sheaf),
            "residual": settled.residual,
            "iterations": settled.iterations,
            "converged": settled.converged,
            "cycle": settled.cycle,
        },
    }
    cells = [*sheaf.nodes, *(e.id for e in sheaf.edges)]
    rows = [[s["t"], s["residual"], *s["nodes"].values(), *s["edges"].values()] for s in steps]
    fin = result["stabilized"]
    rows.append(["stabilized", fin["residual"], *fin["nodes"].values(), *fin["edges"].values()])
    summary = (
        f"simulate: {scenario.horizon} step(s), stabilized after {settled.iterations} iteration(s), "
        f"residual {settled.residual}, converged={settled.converged}"
    )
    return run.envelope(scenario.seed, result), _csv(["t", "residual", *cells], rows), summary, 0


def cmd_ei(run: _Run):
    model = run.model()
    request = run.request()
    if request is None:
        raise ValidationError("ei needs --spec")
    spec = request.spec()
    if run.args.seed is not None:
        spec = spec.with_config(seed=run.args.seed)
    res = effective_information(model.sheaf, model.rule, _baseline(model), spec, jobs=run.args.jobs)
    result = {
        **res.to_dict(),
        "targets": list(spec.targets),
        "effect_vars": list(spec.effect_vars),
        "horizon": spec.horizon,
        "mode": spec.mode,
        "distribution": spec.distribution if isinstance(spec.distribution, str) else list(spec.distribution),
    }
    keys = sorted(k for k, v in result.items() if not isinstance(v, list))
    table = _csv(keys, [[result[k] for k in keys]])
    summary = f"ei: {res.ei_bits:.12f} bits over {res.n_interventions} intervention(s)"
    return run.envelope(spec.seed, result), table, summary, 0


def _ei_config(run: _Run, request: EIRequest | None) -> EIConfig:
    config = request.config if request else EIConfig()
    if run.args.seed is not None:
        config = replace(config, seed=run.args.seed)
    return config


def cmd_pairwise(run: _Run):
    model = run.model()
    config = _ei_config(run, run.request())
    pw = pairwise_ei_matrix(model.sheaf, model.rule, _baseline(model), config=config, jobs=run.args.jobs)
    result = {"nodes": list(pw.nodes), "horizon": config.horizon, "matrix": [[_r(x) for x in row] for row in pw.matrix]}
    return run.envelope(config.seed, result), pw.to_csv(), f"pairwise: {len(pw.nodes)}x{len(pw.nodes)} EI matrix", 0


def cmd_emerge(run: _Run):
    model = run.model()
    request = run.request()
    config = _ei_config(run, request)
    baseline = _baseline(model)
    if run.args.grouping and run.args.search:
        raise ValidationError("emerge takes either --grouping or --search, not both")
    if run.args.grouping:
        grouping = parse_grouping(run.text("grouping", run.args.grouping), model.sheaf, run.args.grouping)
        report = causal_resilience_index(model.sheaf, model.rule, baseline, grouping, config, jobs=run.args.jobs)
        result = {**report.to_dict(), "mode": "grouping", "candidates": []}
        best = report
    elif run.args.search:
        search = replace(request.search if request else SearchConfig(), ei=config)
        found = search_macro_nodes(model.sheaf, model.rule, baseline, search, jobs=run.args.jobs)
        best = found.best.report if found.best else None
        head = best.to_dict() if best else {
            "grouping": None,
            "ei_micro_bits": None,
            "ei_macro_bits": None,
            "r_cause_bits": None,
            "score": None,
            "variant": found.variant,
        }
        result = {**head, "mode": found.mode, "candidates": [c.to_dict() for c in found.candidates]}
    else:
        raise ValidationError("emerge needs --grouping or --search")
    rows = []
    for c in result["candidates"] or [{"block": [], "score": result["score"], "report": result}]:
        rep = c.get("report") or {}
        rows.append([
            " ".join(c["block"]) if c["block"] else ";".join("+".join(b) for b in result["grouping"]["blocks"]),
            c.get("score"),
            rep.get("ei_micro_bits"),
            rep.get("ei_macro_bits"),
            rep.get("r_cause_bits"),
        ])
    table = _csv(["block", "score", "ei_micro_bits", "ei_macro_bits", "r_cause_bits"], rows)
    if best is None:
        summary = "emerge: no candidate macro node has positive internal EI"
    else:
        summary = (
            f"emerge: ei_micro {best.ei_micro:.12f}, ei_macro {best.ei_macro:.12f}, "
            f"r_cause {best.r_cause:.12f} bits"
        )
    return run.envelope(config.seed, result), table, summary, 0


def _param(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


REFERENCE_SCENARIOS = {"copy-chain": ScenarioConfig(failures=(FailureEvent("n0", 0),))}


def cmd_generate(run: _Run):
    name = run.args.template
    params = dict(run.args.param or [])
    seed = run.args.seed if run.args.seed is not None else 0
    meta = {"generator": {"tool": TOOL, "version": __version__, "template": name, "parameters": params, "seed": seed}}
    if name in BUILDERS:
        try:
            built = DomainTemplate(name, params, seed).build()
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"invalid parameters for {name}: {exc}") from None
        sheaf, rule, initial, scenario = built
    elif name in REFERENCE:
        try:
            sheaf, rule, initial = REFERENCE[name](**params)
        except TypeError as exc:
            raise ValidationError(f"invalid parameters for {name}: {exc}") from None
        scenario = REFERENCE_SCENARIOS.get(name)
    else:
        raise ValidationError(f"unknown template {name!r}; choose from {sorted([*BUILDERS, *REFERENCE])}")
    model_text = dump_model(sheaf, rule, initial, meta)
    scenario_text = dumps(scenario_to_dict(scenario, sheaf, meta)) if scenario is not None else None
    if run.args.scenario_out:
        if scenario_text is None:
            raise ValidationError(f"template {name!r} has no scripted scenario")
        _write(run.args.scenario_out, scenario_text)
    summary = f"generate: {name} with {len(sheaf.nodes)} node(s), {len(sheaf.edges)} edge(s)"
    return model_text, summary


# ---------------------------------------------------------------- plumbing


COMMANDS = {
    "validate": cmd_validate,
    "sections": cmd_sections,
    "simulate": cmd_simulate,
    "ei": cmd_ei,
    "pairwise": cmd_pairwise,
    "emerge": cmd_emerge,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description="Sheaf-based causal emergence and resilience analysis.")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        if model:
            p.add_argument("--model", required=True, help="model file (JSON)")
        p.add_argument("--out", help="write the report here instead of standard output")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--seed", type=_seed, help="seed override (64-bit unsigned, default 0)")
        p.add_argument("--jobs", type=_jobs, default=1, help="worker processes; results do not depend on it")
        return p

    common(sub.add_parser("validate", help="check a model file and print its violations"))
    p = common(sub.add_parser("sections", help="enumerate global sections"))
    p.add_argument("--limit", type=int, help="stop after this many sections (default 10000)")
    p = common(sub.add_parser("simulate", help="run a failure scenario"))
    p.add_argument("--scenario", required=True)
    p = common(sub.add_parser("ei", help="effective information of one intervention spec"))
    p.add_argument("--spec", required=True)
    p = common(sub.add_parser("pairwise", help="single-node EI between every ordered pair of nodes"))
    p.add_argument("--spec", help="EI request supplying horizon, mode, samples, seed")
    p = common(sub.add_parser("emerge", help="macro-vs-micro EI for a grouping or a searched candidate"))
    p.add_argument("--spec", help="EI request supplying horizon, mode, samples, seed and search options")
    p.add_argument("--grouping")
    p.add_argument("--search", action="store_true")
    p = common(sub.add_parser("generate", help="emit a domain template or reference model"), model=False)
    p.add_argument("template", help=f"one of {', '.join(sorted([*BUILDERS, *REFERENCE]))}")
    p.add_argument("--param", type=_param, action="append", help="template parameter as key=value (repeatable)")
    p.add_argument("--scenario-out", help="also write the template's scripted failure scenario here")
    return parser


def _write(path: str, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0; usage errors are malformed input
        return 0 if not exc.code else ParseError.exit_code
    run = _Run(args)
    try:
        if args.command == "generate":
            text, summary = cmd_generate(run)
            code = 0
        else:
            report, table, summary, code = COMMANDS[args.command](run)
            text = table if args.format == "csv" else dumps(report)
    except SheafCauseError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is an internal invariant breach
        print(f"error[INVARIANT_BREACH]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5
    if args.out:
        _write(args.out, text)
        print(summary)
    else:
        sys.stdout.write(text)
        if args.command == "validate" and code:
            print(summary, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
