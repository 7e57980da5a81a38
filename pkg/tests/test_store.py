import itertools

import pytest

from models.demands import DeliveryOutcome, DemandSignature, DemandState
from services.demand_service import procedural_demand
from services.demand_store import DemandStore
from services.forensic_log import ForensicLog
from utils.errors import StoreUnavailable, UnknownSignature

DEMANDS = {name: procedural_demand("sum", [index, index]) for index, name in enumerate(("a", "b"))}


@pytest.fixture
def store(sim_clock):
    return DemandStore(sim_clock)


def test_deposit_is_idempotent(store):
    first = store.deposit(DEMANDS["a"])
    second = store.deposit(DEMANDS["a"])
    assert first == second
    assert len(store) == 1
    assert store.counts() == {"pending": 1, "inProcess": 0, "computed": 0}


def test_claims_are_fifo(store):
    store.deposit(DEMANDS["b"])
    store.deposit(DEMANDS["a"])
    assert store.claim(None, "w1", 10).signature == DEMANDS["b"].signature
    assert store.claim(None, "w1", 10).signature == DEMANDS["a"].signature
    assert store.claim(None, "w1", 10) is None


def test_first_delivery_wins(store):
    store.deposit(DEMANDS["a"])
    store.claim(None, "w1", 10)
    signature = DEMANDS["a"].signature
    assert store.deliver(signature, 7, "w1") == DeliveryOutcome.ACCEPTED
    assert store.deliver(signature, 7, "w2") == DeliveryOutcome.DUPLICATE
    assert store.deliver(signature, 8, "w2") == DeliveryOutcome.CONFLICT
    fetched = store.fetch(signature)
    assert fetched.state == DemandState.COMPUTED
    assert fetched.value == 7
    assert "conflicting delivery from w2" in store.entry(signature).forensic[0]


def test_deliver_unknown_signature(store):
    with pytest.raises(UnknownSignature):
        store.deliver(DemandSignature("0" * 32), 1, "w1")


def test_fetch_unknown_is_not_found(store):
    assert store.fetch(DemandSignature("0" * 32)).state == DemandState.NOT_FOUND


def test_expired_lease_returns_demand_to_pending(store, sim_clock):
    store.deposit(DEMANDS["a"])
    store.claim(None, "w1", 5)
    assert store.expire_leases(sim_clock.now_millis() + 5) == []
    reverted = store.expire_leases(sim_clock.now_millis() + 6)
    assert reverted == [DEMANDS["a"].signature]
    assert store.claim(None, "w2", 5).signature == DEMANDS["a"].signature


def test_late_delivery_after_expiry_is_accepted_once(store, sim_clock):
    store.deposit(DEMANDS["a"])
    store.claim(None, "w1", 1)
    store.expire_leases(10)
    store.claim(None, "w2", 1)
    signature = DEMANDS["a"].signature
    assert store.deliver(signature, 3, "w1") == DeliveryOutcome.ACCEPTED
    assert store.deliver(signature, 3, "w2") == DeliveryOutcome.DUPLICATE


def test_release_claims_only_touches_the_worker(store):
    store.deposit(DEMANDS["a"])
    store.deposit(DEMANDS["b"])
    store.claim(None, "w1", 10)
    store.claim(None, "w2", 10)
    assert store.release_claims("w1") == [DEMANDS["a"].signature]
    assert store.fetch(DEMANDS["b"].signature).state == DemandState.IN_PROCESS


def test_unavailable_store_refuses_operations(store):
    store.available = False
    with pytest.raises(StoreUnavailable):
        store.deposit(DEMANDS["a"])


def test_observer_sees_each_signature_once(store):
    seen = []
    store.subscribe(lambda signature, value: seen.append((signature.value, value)))
    store.deposit(DEMANDS["a"])
    store.deliver(DEMANDS["a"].signature, 1, "w1")
    store.deliver(DEMANDS["a"].signature, 1, "w2")
    assert seen == [(DEMANDS["a"].signature.value, 1)]


def test_dump_lines_format(store):
    store.deposit(DEMANDS["a"])
    store.deliver(DEMANDS["a"].signature, [1, 2], "w1")
    assert store.dump_lines() == [f"{DEMANDS['a'].signature.value} procedural computed [1,2]"]


def test_lifecycle_events_are_logged(sim_clock):
    log = ForensicLog(sim_clock)
    store = DemandStore(sim_clock, log.emitter("T2"))
    store.deposit(DEMANDS["a"])
    store.claim(None, "w1", 10)
    store.deliver(DEMANDS["a"].signature, 1, "w1")
    assert [e.name for e in log.events()] == ["demand_deposited", "demand_claimed", "demand_computed"]


# ---------------------------------------------------------------------------
# Every sequence of up to three operations agrees with a plain sequential model.

OPERATIONS = [
    ("deposit", "a"), ("deposit", "b"), ("claim", "w1"), ("claim", "w2"),
    ("deliver", "a", 1), ("deliver", "a", 2), ("fetch", "a"), ("release", "w1"),
]


class SequentialModel:
    def __init__(self):
        self.order: list[str] = []
        self.entries: dict[str, dict] = {}

    def apply(self, op):
        name = op[0]
        if name == "deposit":
            if op[1] not in self.entries:
                self.order.append(op[1])
                self.entries[op[1]] = {"state": "pending", "worker": None, "value": None}
            return op[1]
        if name == "claim":
            for key in self.order:
                entry = self.entries[key]
                if entry["state"] == "pending":
                    entry.update(state="inProcess", worker=op[1])
                    return key
            return None
        if name == "deliver":
            entry = self.entries.get(op[1])
            if entry is None:
                return "unknown"
            if entry["state"] == "computed":
                return "duplicate" if entry["value"] == op[2] else "conflict"
            entry.update(state="computed", worker=None, value=op[2])
            return "accepted"
        if name == "fetch":
            entry = self.entries.get(op[1])
            if entry is None:
                return ("notFound", None)
            return (entry["state"], entry["value"])
        if name == "release":
            released = []
            for key in self.order:
                entry = self.entries[key]
                if entry["state"] == "inProcess" and entry["worker"] == op[1]:
                    entry.update(state="pending", worker=None)
                    released.append(key)
            return released
        raise AssertionError(name)


def _apply_to_store(store, op):
    names = {DEMANDS[k].signature.value: k for k in DEMANDS}
    name = op[0]
    if name == "deposit":
        return names[store.deposit(DEMANDS[op[1]]).value]
    if name == "claim":
        demand = store.claim(None, op[1], 100)
        return None if demand is None else names[demand.signature.value]
    if name == "deliver":
        try:
            return store.deliver(DEMANDS[op[1]].signature, op[2], "w1").value
        except UnknownSignature:
            return "unknown"
    if name == "fetch":
        fetched = store.fetch(DEMANDS[op[1]].signature)
        return (fetched.state.value, fetched.value)
    if name == "release":
        return [names[s.value] for s in store.release_claims(op[1])]
    raise AssertionError(name)


SEQUENCES = [seq for length in (1, 2, 3) for seq in itertools.product(OPERATIONS, repeat=length)]


def test_store_matches_sequential_model_on_all_short_histories(sim_clock):
    assert len(SEQUENCES) == 8 + 64 + 512
    for sequence in SEQUENCES:
        store = DemandStore(sim_clock)
        model = SequentialModel()
        for op in sequence:
            assert _apply_to_store(store, op) == model.apply(op), sequence
