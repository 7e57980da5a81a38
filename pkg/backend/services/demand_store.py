"""
Demand store (DST state): the shared rendezvous between generator and
worker tiers.

All operations run under one lock so claim/deliver/deposit are
linearizable. Pending demands are served FIFO by deposit order.
"""

import json
import logging
import threading
from collections import OrderedDict
from typing import Any, Callable

from models.demands import (
    Claim,
    Demand,
    DemandKind,
    DemandSignature,
    DemandState,
    DeliveryOutcome,
    FetchResult,
    StoreEntry,
)
from utils.canonical import values_equal
from utils.errors import StoreUnavailable, UnknownSignature

logger = logging.getLogger(__name__)

ResultObserver = Callable[[DemandSignature, Any], None]


class DemandStore:
    def __init__(self, clock, forensics=None):
        self.clock = clock
        self.forensics = forensics
        self.available = True
        self._lock = threading.RLock()
        self._entries: OrderedDict[str, StoreEntry] = OrderedDict()
        self._observers: list[ResultObserver] = []

    # -- helpers

    def _emit(self, name: str, **properties) -> None:
        if self.forensics is not None:
            self.forensics.emit(name, **properties)

    def _check_available(self) -> None:
        if not self.available:
            raise StoreUnavailable("demand store is not reachable")

    def subscribe(self, observer: ResultObserver) -> None:
        """Register a result observer, notified once per signature on first acceptance"""
        with self._lock:
            self._observers.append(observer)

    # -- operations

    def deposit(self, demand: Demand) -> DemandSignature:
        """storeDeposit: idempotent by signature"""
        self._check_available()
        with self._lock:
            key = demand.signature.value
            if key in self._entries:
                return self._entries[key].demand.signature
            stored = demand.copy()
            stored.state = DemandState.PENDING
            stored.claim = None
            self._entries[key] = StoreEntry(stored, deposited_at=self.clock.now_millis())
        logger.debug(f"Deposited {demand.kind.label} demand {key}")
        self._emit("demand_deposited", signature=key, kind=demand.kind.label)
        return demand.signature

    def claim(self, kind_filter: DemandKind | None, worker_id: str, lease_millis: int) -> Demand | None:
        """storeClaim: move the oldest matching pending demand to inProcess"""
        if lease_millis <= 0:
            raise ValueError("lease must be positive")
        self._check_available()
        with self._lock:
            for key, entry in self._entries.items():
                demand = entry.demand
                if demand.state != DemandState.PENDING:
                    continue
                if kind_filter is not None and demand.kind != kind_filter:
                    continue
                deadline = self.clock.now_millis() + lease_millis
                demand.state = DemandState.IN_PROCESS
                demand.claim = Claim(worker_id, deadline)
                claimed = demand.copy()
                break
            else:
                return None
        self._emit("demand_claimed", signature=key, worker=worker_id, deadline=deadline)
        return claimed

    def deliver(self, signature: DemandSignature, value: Any, worker_id: str) -> DeliveryOutcome:
        """storeDeliver: first delivery wins; later ones are duplicates or conflicts"""
        self._check_available()
        key = signature.value
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                raise UnknownSignature(key)
            if entry.computed:
                if values_equal(entry.value, value):
                    return DeliveryOutcome.DUPLICATE
                note = f"conflicting delivery from {worker_id}: {json.dumps(value, sort_keys=True, default=repr)}"
                entry.forensic.append(note)
                outcome = DeliveryOutcome.CONFLICT
            else:
                entry.value = value
                entry.demand.state = DemandState.COMPUTED
                entry.demand.claim = None
                entry.computed_at = self.clock.now_millis()
                outcome = DeliveryOutcome.ACCEPTED
                observers = list(self._observers)
        if outcome == DeliveryOutcome.CONFLICT:
            logger.warning(f"Conflicting delivery for {key} from {worker_id}")
            self._emit("delivery_conflict", signature=key, worker=worker_id)
            return outcome
        self._emit("demand_computed", signature=key, worker=worker_id)
        for observer in observers:
            try:
                observer(signature, value)
            except Exception as e:
                logger.error(f"Result observer failed for {key}: {e}")
        return outcome

    def fetch(self, signature: DemandSignature) -> FetchResult:
        """storeFetch: read-only state probe"""
        self._check_available()
        with self._lock:
            entry = self._entries.get(signature.value)
            if entry is None:
                return FetchResult(DemandState.NOT_FOUND)
            if entry.computed:
                return FetchResult(DemandState.COMPUTED, entry.value)
            return FetchResult(entry.demand.state)

    def expire_leases(self, now: int) -> list[DemandSignature]:
        """storeExpireLeases: revert every inProcess demand whose lease ran out"""
        reverted = []
        with self._lock:
            for key, entry in self._entries.items():
                demand = entry.demand
                if demand.state == DemandState.IN_PROCESS and demand.claim.lease_deadline < now:
                    worker = demand.claim.worker_id
                    demand.state = DemandState.PENDING
                    demand.claim = None
                    reverted.append((demand.signature, worker))
        for signature, worker in reverted:
            logger.warning(f"Lease expired for {signature} held by {worker}")
            self._emit("lease_expired", signature=signature.value, worker=worker)
        return [s for s, _ in reverted]

    def release_claims(self, worker_id: str) -> list[DemandSignature]:
        """Revert every claim held by `worker_id` (deallocation and healing)"""
        released = []
        with self._lock:
            for entry in self._entries.values():
                demand = entry.demand
                if demand.state == DemandState.IN_PROCESS and demand.claim.worker_id == worker_id:
                    demand.state = DemandState.PENDING
                    demand.claim = None
                    released.append(demand.signature)
        for signature in released:
            self._emit("claim_released", signature=signature.value, worker=worker_id)
        return released

    # -- inspection

    def entry(self, signature: DemandSignature) -> StoreEntry | None:
        with self._lock:
            return self._entries.get(signature.value)

    def counts(self) -> dict[str, int]:
        with self._lock:
            counts = {s.value: 0 for s in (DemandState.PENDING, DemandState.IN_PROCESS, DemandState.COMPUTED)}
            for entry in self._entries.values():
                counts[entry.demand.state.value] += 1
            return counts

    def snapshot(self) -> dict[str, Any]:
        """signature -> value for every computed entry"""
        with self._lock:
            return {k: e.value for k, e in self._entries.items() if e.computed}

    def dump_lines(self) -> list[str]:
        """storeDump: `<signature> <kind> <state> <value?>` per entry"""
        lines = []
        with self._lock:
            for key, entry in self._entries.items():
                line = f"{key} {entry.demand.kind.label} {entry.demand.state.value}"
                if entry.computed:
                    line += " " + json.dumps(entry.value, sort_keys=True, separators=(",", ":"))
                lines.append(line)
        return lines

    def __len__(self) -> int:
        return len(self._entries)
