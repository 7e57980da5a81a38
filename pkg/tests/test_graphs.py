from config.settings import RuntimeSettings
from models.demands import Context
from models.forensics import ForensicEvent
from services.graph_service import geer_dot, lifecycle_dot, lifecycle_paths
from services.runtime import boot_instance

SIG = "a" * 40


def _event(name, at, seq=0, **properties):
    return ForensicEvent(name=name, emitter="T2", occurred_at=at, seq=seq, properties=properties)


def test_geer_dot_has_every_node_and_definition_edges(corpus_geers):
    geer = corpus_geers["squares"]
    dot = geer_dot(geer)
    assert dot.startswith("digraph geer {")
    for node in geer.nodes:
        assert f"n{node.id} [" in dot
    assert dot.count("style=dashed") >= 2
    assert f"n{geer.definitions()['Base']}" in dot


def test_lifecycle_paths_follow_store_events():
    events = [
        _event("demand_computed", 40, signature=SIG, worker="T5"),
        _event("demand_deposited", 10, signature=SIG, kind="procedure"),
        _event("demand_claimed", 20, signature=SIG, worker="T4"),
        _event("lease_expired", 30, signature=SIG, worker="T4"),
        _event("demand_claimed", 35, signature=SIG, worker="T5"),
        _event("demand_deposited", 36, seq=1, signature=SIG, kind="procedure"),
        _event("tier_failed", 25, tier="T4"),
    ]
    assert lifecycle_paths(events) == {SIG: ["pending", "inProcess", "pending", "inProcess", "computed"]}


def test_lifecycle_dot_chains_states_per_signature():
    events = [
        _event("demand_deposited", 10, signature=SIG),
        _event("demand_claimed", 20, signature=SIG, worker="T4"),
        _event("demand_computed", 30, signature=SIG, worker="T4"),
    ]
    dot = lifecycle_dot(events)
    short = SIG[:12]
    assert dot.startswith("digraph demand_lifecycle {")
    edges = dot.replace('"', "")
    assert f"{short}_0 -> {short}_1" in edges
    assert f"{short}_1 -> {short}_2" in edges
    assert "demand_computed" in dot


def test_instance_log_shows_complete_lifecycles(corpus_geers):
    instance = boot_instance(RuntimeSettings.for_simulation(11))
    try:
        instance.evaluate(corpus_geers["counter"], Context.of({"t": 3}))
        paths = lifecycle_paths(instance.log.events())
        assert paths
        assert all(path[0] == "pending" for path in paths.values())
        assert any(path == ["pending", "inProcess", "computed"] for path in paths.values())

        assert instance.log.export("dot").decode("utf-8") == lifecycle_dot(instance.log.events())
    finally:
        instance.shutdown()
