import itertools
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_local_sections, brute_sections
from random_models import random_baseline, random_rule, random_sheaf
from sheafcause import fixtures
from sheafcause.causal import EIConfig
from sheafcause.dynamics import NodeKernel, UpdateRule
from sheafcause.emergence import (
    MacroGrouping,
    SearchConfig,
    build_quotient,
    causal_resilience_index,
    collapse_subgraph,
    search_macro_nodes,
)
from sheafcause.errors import CapExceededError, EmptyLocalSectionsError, ValidationError
from sheafcause.model import Sheaf, enumerate_global_sections, induced_subsheaf, validate_sheaf

ORACLE = json.loads((Path(__file__).parent / "fixtures" / "degenerate_oracle.json").read_text())
BIT = ("0", "1")


def test_degenerate_pair_matches_checked_in_oracle():
    sheaf, rule, base = fixtures.degenerate_pair()
    grouping = MacroGrouping.from_blocks(sheaf, [("x", "y")], ["XY"])
    report = causal_resilience_index(sheaf, rule, base, grouping)
    assert report.ei_micro == pytest.approx(ORACLE["ei_micro_bits"], abs=1e-6)
    assert report.ei_macro == pytest.approx(ORACLE["ei_macro_bits"], abs=1e-6)
    assert report.r_cause > 0 and report.emergent
    assert report.r_cause == report.ei_macro - report.ei_micro
    assert report.to_dict()["grouping"] == {"blocks": [["x", "y"]], "names": ["XY"]}


def test_degenerate_macro_stalk_and_dynamics():
    sheaf, rule, _ = fixtures.degenerate_pair()
    node = collapse_subgraph(sheaf, rule, ["x", "y"], "XY")
    assert [s.node_states for s in node.local_sections] == [{"x": 0, "y": 0}, {"x": 1, "y": 1}]
    # both macro states are fixed points: A -> A, B -> B
    assert node.kernel.table.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_single_node_collapse_mirrors_the_stalk():
    sheaf, rule, _ = fixtures.majority_triangle()
    node = collapse_subgraph(sheaf, rule, ["a"])
    assert node.stalk.labels == sheaf.node_stalks["a"].labels


def test_id2_block_has_two_states_and_full_collapse_has_no_edges():
    sheaf, rule, _ = fixtures.id2()
    grouping = MacroGrouping.from_blocks(sheaf, [("u", "v")])
    q = build_quotient(sheaf, rule, grouping)
    assert q.sheaf.nodes == ("[u+v]",) and q.sheaf.node_card("[u+v]") == 2 and not q.sheaf.edges
    assert validate_sheaf(q.sheaf).ok


def test_singleton_grouping_is_structurally_identical():
    sheaf, rule, base = fixtures.majority_triangle()
    q = build_quotient(sheaf, rule, MacroGrouping.singletons(sheaf))
    assert q.sheaf.nodes == sheaf.nodes
    assert [(e.id, e.source, e.target) for e in q.sheaf.edges] == [(e.id, e.source, e.target) for e in sheaf.edges]
    assert q.rule.kernels == rule.kernels
    report = causal_resilience_index(sheaf, rule, base, MacroGrouping.singletons(sheaf))
    assert report.r_cause == 0.0 and report.ei_micro == report.ei_macro


def test_grouping_validation():
    sheaf, _, _ = fixtures.majority_triangle()
    with pytest.raises(ValidationError):
        MacroGrouping.from_blocks(sheaf, [("a", "b"), ("b", "c")])
    with pytest.raises(ValidationError):
        MacroGrouping.from_blocks(sheaf, [("a", "zz")])
    with pytest.raises(ValidationError):
        MacroGrouping.from_blocks(sheaf, [("a", "b")], ["c"])
    g = MacroGrouping.from_blocks(sheaf, [("b", "a")])
    assert g.blocks == (("a", "b"), ("c",)) and g.names == ("[a+b]", "c")


def test_unsatisfiable_block_raises_empty_local_sections():
    sheaf = Sheaf.build({"a": BIT, "b": BIT}, [("ab", "a", "b", BIT, None, None), ("loop", "a", "a", BIT, None, (1, 0))])
    with pytest.raises(EmptyLocalSectionsError) as err:
        collapse_subgraph(sheaf, None, ["a", "b"])
    assert err.value.block == ("a", "b")
    assert len(enumerate_global_sections(induced_subsheaf(sheaf, ["a", "b"]))) == 0


@pytest.mark.parametrize("seed", range(15))
def test_macro_stalk_size_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    sheaf = random_sheaf(rng, 5, 6, max_card=3)
    block = sorted(rng.choice(5, size=3, replace=False).tolist())
    names = [sheaf.nodes[i] for i in block]
    want = brute_local_sections(sheaf, names)
    if not want:
        with pytest.raises(EmptyLocalSectionsError):
            collapse_subgraph(sheaf, None, names)
        return
    node = collapse_subgraph(sheaf, None, names)
    assert node.stalk.cardinality == len(want)
    assert sorted(tuple(s.node_states[v] for v in names) for s in node.local_sections) == sorted(want)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_quotient_preserves_global_section_count(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    sheaf = random_sheaf(rng, n, int(rng.integers(1, 7)), max_card=3)
    size = int(rng.integers(2, n + 1))
    block = [sheaf.nodes[i] for i in sorted(rng.choice(n, size=size, replace=False).tolist())]
    try:
        q = build_quotient(sheaf, None, MacroGrouping.from_blocks(sheaf, [block]))
    except EmptyLocalSectionsError:
        assert not brute_local_sections(sheaf, block)
        return
    assert validate_sheaf(q.sheaf).ok
    assert len(enumerate_global_sections(q.sheaf)) == len(brute_sections(sheaf))


def test_project_and_lift_round_trip_on_sections():
    sheaf, rule, _ = fixtures.parity_path()
    q = build_quotient(sheaf, rule, MacroGrouping.from_blocks(sheaf, [("a", "b")]))
    for sec in enumerate_global_sections(sheaf):
        assert q.lift(q.project(sec)) == sec


def test_macro_kernel_projects_to_nearest_local_section():
    # a->b identity maps; a flips, b keeps. From 00 the raw result is a=1, b=0 with
    # the internal edge tail-forced from a, i.e. (1, 0, e=1): one away from 11 and
    # two away from 00, so the macro state follows a and flips
    sheaf = Sheaf.build({"a": BIT, "b": BIT}, [("ab", "a", "b", BIT, None, None)])
    rule = UpdateRule.from_functions(sheaf, {"a": lambda own, _: 1 - own, "b": lambda own, _: own})
    node = collapse_subgraph(sheaf, rule, ["a", "b"])
    assert node.kernel.table.tolist() == [[0.0, 1.0], [1.0, 0.0]]


def own_permutation_rule(rng, sheaf):
    kernels = {}
    for v in sheaf.nodes:
        k = sheaf.node_card(v)
        perm = rng.permutation(k)
        ins = tuple(sheaf.edge_card(e) for e in sheaf.graph.incoming(v))
        kernels[v] = NodeKernel.from_function(k, ins, lambda own, _, p=perm: int(p[own]))
    return UpdateRule(kernels)


@pytest.mark.parametrize("seed", range(10))
def test_bijective_dynamics_never_show_emergence(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    sheaf = random_sheaf(rng, n, n + 1, max_card=3, connected=True)
    rule = own_permutation_rule(rng, sheaf)
    base = random_baseline(rng, sheaf)
    for size in range(2, n + 1):
        for block in itertools.combinations(sheaf.nodes, size):
            try:
                grouping = MacroGrouping.from_blocks(sheaf, [block])
                report = causal_resilience_index(sheaf, rule, base, grouping)
            except EmptyLocalSectionsError:
                continue
            assert report.r_cause <= 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_global_bijection_collapsed_whole_never_shows_emergence(seed):
    # complete digraph with identity maps: each node can compute its coordinate of any permutation
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    names = [f"v{i}" for i in range(n)]
    sheaf = Sheaf.build({v: BIT for v in names}, [(f"{a}{b}", a, b, BIT, None, None) for a in names for b in names if a != b])
    perm = rng.permutation(2**n)
    states = list(itertools.product(range(2), repeat=n))
    image = {s: states[perm[i]] for i, s in enumerate(states)}

    def coordinate(i):
        def fn(own, ins):
            others = list(ins)
            full = tuple(others[:i]) + (own,) + tuple(others[i:])
            return image[full][i]
        return fn

    rule = UpdateRule.from_functions(sheaf, {v: coordinate(i) for i, v in enumerate(names)})
    base = sheaf.section_from_nodes([0] * n)
    report = causal_resilience_index(sheaf, rule, base, MacroGrouping.from_blocks(sheaf, [names]))
    assert report.ei_micro == pytest.approx(n, abs=1e-12)
    assert report.r_cause <= 1e-12


def test_symmetric_chains_top_two_candidates_tie():
    sheaf, rule, base = fixtures.two_copy_chains()
    result = search_macro_nodes(sheaf, rule, base)
    top = result.candidates[:2]
    assert [c.block for c in top] == [("a", "b"), ("c", "d")]
    assert top[0].score == pytest.approx(top[1].score, abs=1e-9)
    assert all(c.report is not None for c in top)


def test_independent_nodes_give_no_candidates():
    sheaf = Sheaf.build({v: BIT for v in "abc"}, [])
    result = search_macro_nodes(sheaf, UpdateRule.identity(sheaf), sheaf.section_from_nodes([0, 0, 0]))
    assert result.candidates == [] and result.best is None


def test_sum_variant_and_full_table():
    rng = np.random.default_rng(2)
    sheaf = random_sheaf(rng, 5, 7, max_card=2, connected=True)
    rule = random_rule(rng, sheaf, stochastic=0.3)
    base = random_baseline(rng, sheaf)
    result = search_macro_nodes(sheaf, rule, base, SearchConfig(variant="sum", reports=False))
    assert result.best is None or all(result.best.score >= c.score - 1e-12 for c in result.table)
    for c in result.table:
        pairs = len(c.block) * (len(c.block) - 1)
        assert c.mean_score == pytest.approx(c.raw_score / pairs, abs=1e-12)


def test_exhaustive_cap_directs_to_greedy():
    sheaf = Sheaf.build({f"n{i}": BIT for i in range(4)}, [])
    with pytest.raises(CapExceededError):
        search_macro_nodes(sheaf, UpdateRule.identity(sheaf), sheaf.section_from_nodes([0] * 4),
                           SearchConfig(mode="exhaustive", exact_cap=3))


@pytest.mark.parametrize("seed", range(8))
def test_greedy_never_beats_exhaustive(seed):
    rng = np.random.default_rng(100 + seed)
    sheaf = random_sheaf(rng, 6, 8, max_card=2, connected=True)
    rule = random_rule(rng, sheaf, stochastic=0.3)
    base = random_baseline(rng, sheaf)
    ex = search_macro_nodes(sheaf, rule, base, SearchConfig(mode="exhaustive", reports=False))
    gr = search_macro_nodes(sheaf, rule, base, SearchConfig(mode="greedy", reports=False), pairwise=ex.pairwise)
    top = lambda r: r.best.score if r.best else 0.0
    assert top(gr) <= top(ex) + 1e-12


def test_search_is_deterministic_across_jobs():
    sheaf, rule, base = fixtures.two_copy_chains()
    cfg = SearchConfig(ei=EIConfig(mode="sampled", samples=500, seed=3))
    a = search_macro_nodes(sheaf, rule, base, cfg, jobs=1)
    b = search_macro_nodes(sheaf, rule, base, cfg, jobs=2)
    assert [c.to_dict() for c in a.candidates] == [c.to_dict() for c in b.candidates]


def test_projection_ties_go_to_the_first_local_section():
    # the self-loop excludes a=1, the edge forces b=0; a=1 is one away from both survivors
    three = ("0", "1", "2")
    sheaf = Sheaf.build({"a": three, "b": BIT}, [("loop", "a", "a", BIT, (0, 1, 0), (0, 0, 0)), ("ab", "a", "b", BIT, (0, 0, 0), None)])
    node = collapse_subgraph(sheaf, None, ["a", "b"])
    assert [(s.node_states["a"], s.node_states["b"]) for s in node.local_sections] == [(0, 0), (2, 0)]
    assert node.nearest((1, 0, 0, 0)) == 0
