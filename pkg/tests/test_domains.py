import pytest

from oracles import brute_ei
from sheafcause.causal import EIConfig, effective_information
from sheafcause.domains import DomainTemplate, build_microservice, build_neural, build_powergrid
from sheafcause.dynamics import ScenarioConfig, run_scenario, stabilize
from sheafcause.model import validate_sheaf

TEMPLATES = [
    ("microservice", {}, 0),
    ("microservice", {"n_services": 6, "topology": "dag"}, 3),
    ("microservice", {"n_services": 5, "load_levels": 3}, 1),
    ("neural", {}, 0),
    ("neural", {"n_neurons": 4, "topology": "assembly"}, 0),
    ("neural", {"n_neurons": 5, "topology": "random", "edge_prob": 0.6}, 2),
    ("powergrid", {}, 0),
    ("powergrid", {"n_buses": 4, "topology": "ring"}, 0),
    ("powergrid", {"n_buses": 6, "topology": "random", "levels": 3, "capacity": 2, "demand": 2, "generation": 2}, 5),
]


def settle(model):
    traj = run_scenario(model.sheaf, model.rule, model.initial, model.scenario)
    return traj.stabilized


def labels(model, section):
    return section.labels(model.sheaf)["nodes"]


@pytest.mark.parametrize("name,params,seed", TEMPLATES)
def test_templates_validate_clean_with_a_fixed_baseline(name, params, seed):
    model = DomainTemplate(name, params, seed).build()
    assert validate_sheaf(model.sheaf).ok
    res = stabilize(model.sheaf, model.rule, model.initial)
    assert (res.iterations, res.residual, res.converged) == (0, 0, True)


@pytest.mark.parametrize("name,params,seed", TEMPLATES)
def test_templates_are_deterministic_per_seed(name, params, seed):
    a = DomainTemplate(name, params, seed).build()
    b = DomainTemplate(name, params, seed).build()
    assert a.sheaf.graph == b.sheaf.graph
    assert a.initial == b.initial and a.scenario == b.scenario


def test_microservice_chain_root_outage_takes_every_service_down():
    model = build_microservice()
    before = labels(model, model.initial)
    settled = settle(model)
    after = labels(model, settled.section)
    assert settled.converged and settled.residual == 0
    for v in model.sheaf.nodes:
        assert after[v] == "down@" + before[v].split("@")[1]


def test_microservice_dag_outcome_follows_the_majority_rule():
    model = build_microservice(n_services=6, topology="dag", seed=3)
    parents = {v: [e.source for e in model.sheaf.edges if e.target == v] for v in model.sheaf.nodes}
    health = {v: "healthy" for v in model.sheaf.nodes}
    health["svc0"] = "down"
    # services are numbered in topological order
    for v in model.sheaf.nodes[1:]:
        down = sum(health[p] == "down" for p in parents[v])
        if 2 * down > len(parents[v]):
            health[v] = "down"
        elif any(health[p] != "healthy" for p in parents[v]):
            health[v] = "degraded"
    settled = settle(model)
    got = {v: s.split("@")[0] for v, s in labels(model, settled.section).items()}
    assert got == health
    assert set(got.values()) == {"down"}


def test_neural_pair_lesion_silences_both():
    model = build_neural()
    assert set(labels(model, model.initial).values()) == {"firing"}
    settled = settle(model)
    assert labels(model, settled.section) == {"n0": "quiet", "n1": "quiet"}
    assert settled.residual == 0


def test_neural_assembly_survives_a_single_lesion():
    model = build_neural(n_neurons=4, topology="assembly")
    settled = settle(model)
    assert labels(model, settled.section) == {"n0": "quiet", "n1": "firing", "n2": "firing", "n3": "firing"}


def test_neural_assembly_ei_matches_oracle():
    model = build_neural(n_neurons=3, topology="assembly")
    base = dict(zip(model.sheaf.nodes, model.initial.node_row(model.sheaf)))
    targets, effects = ["n0", "n1"], ["n2"]
    got = effective_information(model.sheaf, model.rule, model.initial, EIConfig().spec(targets, effects)).ei_bits
    assert got == pytest.approx(brute_ei(model.sheaf, model.rule, base, targets, effects), abs=1e-12)


def test_powergrid_pair_line_cut_leaves_the_load_short():
    model = build_powergrid()
    assert labels(model, model.initial) == {"bus0": "+1", "bus1": "0"}
    settled = settle(model)
    assert labels(model, settled.section) == {"bus0": "+1", "bus1": "-1"}
    assert settled.section.edge_states["bus0->bus1"] == 0 and settled.residual == 0


def test_powergrid_ring_reroutes_around_one_cut():
    model = build_powergrid(n_buses=4, topology="ring")
    settled = settle(model)
    assert labels(model, settled.section) == labels(model, model.initial)


def test_powergrid_ring_with_double_demand_sheds_load():
    model = build_powergrid(n_buses=4, topology="ring", demand=2)
    settled = settle(model)
    assert labels(model, settled.section) == {"bus0": "+1", "bus1": "-1", "bus2": "+1", "bus3": "0"}
    assert settled.residual == 0


def test_no_failure_leaves_domains_at_baseline():
    for name, params, seed in TEMPLATES:
        model = DomainTemplate(name, params, seed).build()
        traj = run_scenario(model.sheaf, model.rule, model.initial, ScenarioConfig(horizon=2))
        assert traj.stabilized.section == model.initial


@pytest.mark.parametrize(
    "name,params",
    [
        ("microservice", {"n_services": 1}),
        ("microservice", {"topology": "mesh"}),
        ("microservice", {"load_levels": 4}),
        ("neural", {"n_neurons": 3}),
        ("neural", {"threshold": 0}),
        ("neural", {"topology": "random", "edge_prob": 2.0}),
        ("powergrid", {"topology": "ring", "n_buses": 5}),
        ("powergrid", {"demand": 3}),
        ("powergrid", {"capacity": 0}),
        ("nope", {}),
    ],
)
def test_bad_parameters_raise_value_error(name, params):
    with pytest.raises(ValueError):
        DomainTemplate(name, params).build()
