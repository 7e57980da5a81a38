import pytest

from config.topology import Scenario, ScenarioStep, load_scenario, load_topology
from services.forensic_log import read_lines
from services.simulation import run_simulation
from utils.errors import ConfigurationError, ScenarioError

KILL_STORE = Scenario(ticks=150, steps=[
    ScenarioStep(at=0, action="evaluate", program="counter", tag=8),
    ScenarioStep(at=1, action="kill-tier", tier="T2"),
    ScenarioStep(at=40, action="restart-tier", tier="T2"),
])


def _values(result):
    return {(r["program"], r["tag"]): r.get("value", r.get("error")) for r in result.results}


def test_same_seed_gives_byte_identical_exports():
    scenario = Scenario(ticks=80, steps=[
        ScenarioStep(at=0, action="evaluate", program="fib", tag=12),
        ScenarioStep(at=2, action="drop-link", tier="T4", probability=0.3),
        ScenarioStep(at=3, action="evaluate", program="counter", tag=5),
        ScenarioStep(at=10, action="inject-unauthenticated", tier="T1", count=10),
    ])
    first = run_simulation(None, scenario, seed=7)
    second = run_simulation(None, scenario, seed=7)
    assert first.export("lines") == second.export("lines")
    assert first.export("sql") == second.export("sql")
    assert _values(first) == {("fib", 12): 144, ("counter", 5): 11}


def test_evaluation_results_are_logged_with_their_context():
    scenario = Scenario(ticks=40, steps=[ScenarioStep(at=0, action="evaluate", program="naturals", tag=9)])
    result = run_simulation(None, scenario, seed=1)
    (event,) = result.log.events("evaluation_result")
    assert event.context == {"t": 9}
    assert event.get("value") == 9


def test_store_outage_delays_and_recovers():
    result = run_simulation(None, KILL_STORE, seed=7)
    assert _values(result) == {("counter", 8): 17}
    assert result.log.events("store_down")
    assert result.log.events("store_restarted")
    assert not result.log.events("evaluation_unfinished")


def test_unfinished_evaluations_are_reported():
    scenario = Scenario(ticks=5, steps=[
        ScenarioStep(at=0, action="kill-tier", tier="T2"),
        ScenarioStep(at=1, action="evaluate", program="counter", tag=3),
    ])
    result = run_simulation(None, scenario, seed=7)
    assert result.results == []
    (event,) = result.log.events("evaluation_unfinished")
    assert event.get("program") == "counter"


def test_unknown_tier_is_a_scenario_error():
    scenario = Scenario(ticks=3, steps=[ScenarioStep(at=1, action="kill-tier", tier="T99")])
    with pytest.raises(ScenarioError):
        run_simulation(None, scenario, seed=7)


def test_unknown_program_is_a_scenario_error():
    scenario = Scenario(ticks=3, steps=[ScenarioStep(at=0, action="evaluate", program="nope", tag=1)])
    with pytest.raises(ScenarioError):
        run_simulation(None, scenario, seed=7)


def test_added_node_joins_mid_run():
    scenario = Scenario.model_validate({"ticks": 10, "steps": [
        {"at": 2, "action": "add-node",
         "node": {"node_id": "gamma", "capacity": {"DWT": 1}, "tiers": ["DWT"]}},
    ]})
    result = run_simulation(None, scenario, seed=7)
    assert [e.get("node") for e in result.log.events("node_registered")][-1] == "gamma"


def test_injection_is_rejected_and_alerted():
    scenario = Scenario(ticks=5, steps=[ScenarioStep(at=1, action="inject-unauthenticated", tier="T2", count=100)])
    result = run_simulation(None, scenario, seed=7)
    assert result.injected == 100
    assert len(result.log.events("unauthenticated_message")) == 100
    assert result.log.events("protection_alert")


def test_exported_lines_parse_back():
    scenario = Scenario(ticks=20, steps=[ScenarioStep(at=0, action="evaluate", program="counter", tag=2)])
    result = run_simulation(None, scenario, seed=3)
    parsed = read_lines(result.export("lines"))
    assert [(e.name, e.emitter, e.occurred_at) for e in parsed] == \
        [(e.name, e.emitter, e.occurred_at) for e in result.log.events()]


def test_topology_and_scenario_files(tmp_path):
    topology_path = tmp_path / "topology.json"
    topology_path.write_text(
        '{"nodes": [{"node_id": "solo", "capacity": {"DST": 1, "DGT": 1, "DWT": 1},'
        ' "tiers": ["DST", "DGT", "DWT"]}]}', encoding="utf-8")
    scenario_path = tmp_path / "scenario.json"
    scenario_path.write_text('{"ticks": 30, "steps": [{"at": 0, "action": "evaluate",'
                             ' "program": "counter", "tag": 4}]}', encoding="utf-8")
    result = run_simulation(load_topology(str(topology_path)), load_scenario(str(scenario_path)), seed=4)
    assert _values(result) == {("counter", 4): 9}


@pytest.mark.parametrize("text, field", [
    ('{"nodes": []}', "nodes"),
    ('{"nodes": [{"node_id": "a", "tiers": ["DWT"]}]}', "nodes.0"),
    ("not json", "topology"),
])
def test_bad_topology_names_the_field(tmp_path, text, field):
    path = tmp_path / "topology.json"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigurationError) as excinfo:
        load_topology(str(path))
    assert str(excinfo.value).startswith(field)
