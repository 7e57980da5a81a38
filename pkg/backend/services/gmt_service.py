"""
General manager tier (GMT): node registration, tier allocation and
deallocation, the authoritative Geer pool, heartbeats and failure
detection. All state has a single owner; other tiers reach it through
credentialed system demands.
"""

import logging
import threading
from typing import Any

from models.demands import DemandKind
from models.geer import Geer
from models.tiers import (
    AllocationRequest,
    DeallocationRequest,
    NodeDescriptor,
    RegistrationResult,
    TierKind,
    TierRef,
    TierRegistration,
    TierStatus,
)
from services.credentials import encode_token, issue_credential, verify_token
from services.demand_service import decode_demand
from services.geer_codec import encode_geer
from services.messaging import GatedService, Messenger
from services.tier_service import NodeAgent, TierContext
from utils.errors import (
    CapacityExceeded,
    DuplicateNode,
    GmtUnavailable,
    NoCapacity,
    NoDstAvailable,
    StoreUnavailable,
    TierError,
    TransportError,
    Unauthenticated,
    UnknownTier,
)

logger = logging.getLogger(__name__)

GMT_TIER_ID = "T1"
NODE_PREFIX = "node:"


class GeneralManager:
    kind = TierKind.GMT

    def __init__(self, ctx: TierContext, node_id: str):
        self.ctx = ctx
        self.tier_id = ctx.gmt_tier_id
        self.node_id = node_id
        self.available = True
        self.clock = ctx.clock
        self.forensics = ctx.log.emitter(self.tier_id, tier_id=self.tier_id, node_id=node_id)
        self.geer_pool: dict[str, Geer] = {}
        self._lock = threading.RLock()
        self._descriptors: dict[str, NodeDescriptor] = {}
        self._agents: dict[str, NodeAgent] = {}
        self._tiers: dict[str, TierRef] = {
            self.tier_id: TierRef(tier_id=self.tier_id, kind=TierKind.GMT, node_id=node_id, status=TierStatus.LIVE)
        }
        self._last_heartbeat: dict[str, int] = {}
        self._next_tier_number = 2
        self._token = encode_token(issue_credential(ctx.secret, node_id, self.clock.now_micros()))
        self.messenger = Messenger(ctx.router, self.tier_id, self.token, ctx.signatures, self.clock)
        self.service = GatedService(self.tier_id, ctx.secret, self.node_of_tier, self.token,
                                    ctx.signatures, self.clock, self.forensics,
                                    open_ops=frozenset({"register_node"}))
        self.service.register("register_node", self._op_register_node)
        self.service.register("register_tier", self._op_register_tier)
        self.service.register("locate", self._op_locate)
        self.service.register("resource", self._op_resource)
        self.service.register("heartbeat", self._op_heartbeat)
        self.service.register("ping", lambda record, envelope: "pong")
        ctx.router.bind(self.tier_id, self.service.handle)
        ctx.router.open_mailbox(self.tier_id)

    def token(self) -> bytes:
        return self._token

    def _check_available(self) -> None:
        if not self.available:
            raise GmtUnavailable("general manager is not reachable")

    # -- directory

    def node_of_tier(self, tier_id: str) -> str | None:
        """Which node hosts `tier_id` (node agents speak as `node:<id>`); failed and deallocated tiers have none"""
        with self._lock:
            if tier_id.startswith(NODE_PREFIX):
                node_id = tier_id[len(NODE_PREFIX):]
                return node_id if node_id in self._descriptors or node_id == self.node_id else None
            ref = self._tiers.get(tier_id)
            if ref is None or ref.status in (TierStatus.FAILED, TierStatus.DEALLOCATED):
                return None
            return ref.node_id

    def tier(self, tier_id: str) -> TierRef:
        with self._lock:
            ref = self._tiers.get(tier_id)
            if ref is None:
                raise UnknownTier(tier_id)
            return ref

    def tiers(self, kind: TierKind | None = None, status: TierStatus | None = None) -> list[TierRef]:
        with self._lock:
            return [r.model_copy() for r in self._tiers.values()
                    if (kind is None or r.kind == kind) and (status is None or r.status == status)]

    def nodes(self) -> list[NodeDescriptor]:
        with self._lock:
            return list(self._descriptors.values())

    def attach_agent(self, agent: NodeAgent) -> None:
        with self._lock:
            self._agents[agent.node_id] = agent

    def agent(self, node_id: str) -> NodeAgent:
        return self._agents[node_id]

    # -- registration

    def register_node(self, descriptor: NodeDescriptor) -> RegistrationResult:
        """registerNode"""
        self._check_available()
        with self._lock:
            if descriptor.node_id in self._descriptors:
                raise DuplicateNode(f"node '{descriptor.node_id}' is already registered")
            self._descriptors[descriptor.node_id] = descriptor
        credential = issue_credential(self.ctx.secret, descriptor.node_id, self.clock.now_micros())
        logger.info(f"Registered node {descriptor.node_id}")
        self.forensics.emit("node_registered", node=descriptor.node_id)
        return RegistrationResult(accepted=True, credential=encode_token(credential))

    def _op_register_node(self, record: dict, envelope) -> dict:
        result = self.register_node(NodeDescriptor.model_validate(record["descriptor"]))
        return result.model_dump()

    def register_tier(self, registration: TierRegistration) -> bool:
        """A new tier's registration demand; acknowledging makes it live"""
        with self._lock:
            ref = self._tiers.get(registration.tier_id)
            if ref is None:
                raise UnknownTier(registration.tier_id)
            if registration.destination_gmt_tier_id != self.tier_id:
                raise TierError(f"registration addressed to {registration.destination_gmt_tier_id}")
            if ref.node_id != registration.node_id or ref.kind != registration.kind:
                raise TierError(f"registration for {registration.tier_id} does not match its allocation")
            ref.status = TierStatus.LIVE
            self._last_heartbeat[ref.tier_id] = self.clock.now_millis()
        self.forensics.emit("tier_live", tier=ref.tier_id, kind=ref.kind.value, node=ref.node_id)
        return True

    def _op_register_tier(self, record: dict, envelope) -> bool:
        registration = TierRegistration.model_validate(record["registration"])
        if envelope.source_tier_id != registration.tier_id:
            raise Unauthenticated("tiers register themselves only")
        return self.register_tier(registration)

    # -- allocation

    def _free_capacity(self, node_id: str, kind: TierKind) -> int:
        used = sum(1 for r in self._tiers.values()
                   if r.node_id == node_id and r.kind == kind and r.occupies_capacity())
        return self._descriptors[node_id].capacity_for(kind) - used

    def _placement(self, kind: TierKind, count: int, preferred: str | None,
                   exclude: frozenset[str] = frozenset()) -> list[str] | None:
        candidates = [preferred] if preferred else [n for n in self._descriptors if n not in exclude]
        free = {n: self._free_capacity(n, kind) for n in candidates if n in self._agents}
        if sum(max(f, 0) for f in free.values()) < count:
            return None
        placement = []
        for node_id in candidates:
            while free.get(node_id, 0) > 0 and len(placement) < count:
                placement.append(node_id)
                free[node_id] -= 1
        return placement

    def _new_tier_id(self) -> str:
        tier_id = f"T{self._next_tier_number}"
        self._next_tier_number += 1
        return tier_id

    def _spawn(self, kind: TierKind, node_id: str) -> str:
        with self._lock:
            tier_id = self._new_tier_id()
            self._tiers[tier_id] = TierRef(tier_id=tier_id, kind=kind, node_id=node_id)
        self.forensics.emit("tier_allocated", tier=tier_id, kind=kind.value, node=node_id)
        self._agents[node_id].spawn(kind, tier_id)
        return tier_id

    def allocate_tiers(self, request: AllocationRequest, credential_token: bytes) -> RegistrationResult:
        """allocateTiers: the caller proves its node identity with its credential"""
        self._check_available()
        verdict = verify_token(credential_token, self.ctx.secret)
        if not verdict.accepted or verdict.node_id not in self._descriptors and verdict.node_id != self.node_id:
            self.forensics.emit("unauthenticated_message", source="allocate", reason=verdict.reason or "unknown_node")
            raise Unauthenticated(f"allocation rejected: {verdict.reason or 'unknown node'}")
        if request.kind == TierKind.GMT:
            raise TierError("an instance has exactly one GMT")
        if request.kind in (TierKind.DGT, TierKind.DWT) and not self.tiers(TierKind.DST, TierStatus.LIVE):
            raise NoDstAvailable(f"no live DST for {request.kind.value} allocation")
        with self._lock:
            if request.preferred_node_id and request.preferred_node_id not in self._descriptors:
                raise TierError(f"unknown node '{request.preferred_node_id}'")
            placement = self._placement(request.kind, request.count, request.preferred_node_id)
        if placement is None:
            raise CapacityExceeded(f"not enough {request.kind.value} capacity for {request.count} tiers")
        assigned = [self._spawn(request.kind, node_id) for node_id in placement]
        logger.info(f"Allocated {request.kind.value} tiers {assigned}")
        return RegistrationResult(accepted=True, credential=credential_token, assigned_tier_ids=assigned)

    def allocate_replacement(self, kind: TierKind, failed_node_id: str | None = None) -> str:
        """Allocation on the GMT's own authority (healing); prefers other nodes than the failed one"""
        with self._lock:
            exclude = frozenset({failed_node_id}) if failed_node_id else frozenset()
            placement = self._placement(kind, 1, None, exclude) or self._placement(kind, 1, None)
        if placement is None:
            raise NoCapacity(f"no node has spare {kind.value} capacity")
        return self._spawn(kind, placement[0])

    def deallocate_tier(self, request: DeallocationRequest) -> bool:
        """deallocateTier: a deallocated DWT's claims go back to pending at once"""
        ref = self.tier(request.tier_id)
        if ref.kind == TierKind.GMT:
            raise TierError("the GMT cannot be deallocated")
        if ref.status == TierStatus.DEALLOCATED:
            raise UnknownTier(request.tier_id)
        agent = self._agents.get(ref.node_id)
        if agent is not None:
            agent.remove(ref.tier_id)
        released = []
        if ref.kind == TierKind.DWT:
            try:
                released = self.release_claims(ref.tier_id)
            except (StoreUnavailable, TransportError) as e:
                logger.warning(f"Claims of {ref.tier_id} stay leased until they expire: {e}")
        with self._lock:
            ref.status = TierStatus.DEALLOCATED
            self._last_heartbeat.pop(ref.tier_id, None)
        logger.info(f"Deallocated {ref.tier_id} ({request.reason})")
        self.forensics.emit("tier_deallocated", tier=ref.tier_id, reason=request.reason, released=len(released))
        return True

    def release_claims(self, worker_tier_id: str) -> list[str]:
        dst = self.locate(TierKind.DST)
        return self.messenger.call(dst, {"op": "release_claims", "worker": worker_tier_id})

    def locate(self, kind: TierKind) -> str:
        """First live tier of a kind (the DST is authoritative and single)"""
        with self._lock:
            for ref in self._tiers.values():
                if ref.kind == kind and ref.status == TierStatus.LIVE:
                    return ref.tier_id
            for ref in self._tiers.values():
                if ref.kind == kind and ref.status == TierStatus.FAILED:
                    return ref.tier_id
        raise NoDstAvailable(f"no {kind.value} tier") if kind == TierKind.DST else UnknownTier(kind.value)

    def _op_locate(self, record: dict, envelope) -> str:
        return self.locate(TierKind.parse(record["kind"]))

    # -- Geer pool

    def publish_geer(self, geer: Geer) -> str:
        self.geer_pool[geer.geer_id] = geer
        return geer.geer_id

    def _op_resource(self, record: dict, envelope) -> str:
        geer = self.geer_pool.get(record["geer_id"])
        if geer is None:
            raise TierError(f"geer {record['geer_id']} is not in the pool")
        self.forensics.emit("resource_served", geer_id=geer.geer_id, to=envelope.source_tier_id)
        return encode_geer(geer)

    # -- liveness

    def heartbeat(self, tier_id: str, timestamp: int) -> None:
        """heartbeat: a beat from an unregistered tier is a protection event"""
        with self._lock:
            ref = self._tiers.get(tier_id)
            if ref is None or ref.status == TierStatus.DEALLOCATED:
                unknown = True
            else:
                unknown = False
                self._last_heartbeat[tier_id] = max(timestamp, self._last_heartbeat.get(tier_id, timestamp))
        if unknown:
            self.forensics.emit("unknown_heartbeat", tier=tier_id)
            raise UnknownTier(tier_id)

    def _op_heartbeat(self, record: dict, envelope) -> None:
        if envelope.source_tier_id != record["tier_id"]:
            raise Unauthenticated("tiers beat for themselves only")
        self.heartbeat(record["tier_id"], record["ts"])

    def detect_failures(self, now: int) -> list[str]:
        """gmtDetectFailures: live tiers silent for longer than the timeout become failed"""
        timeout = self.ctx.settings.heartbeat_timeout
        failed = []
        with self._lock:
            for ref in self._tiers.values():
                if ref.status != TierStatus.LIVE or ref.kind == TierKind.GMT:
                    continue
                if now - self._last_heartbeat.get(ref.tier_id, now) > timeout:
                    ref.status = TierStatus.FAILED
                    failed.append(ref.tier_id)
        for tier_id in failed:
            ref = self._tiers[tier_id]
            logger.warning(f"Tier {tier_id} missed its heartbeats")
            self.forensics.emit("tier_failed", tier=tier_id, kind=ref.kind.value, node=ref.node_id)
        return failed

    def mark_restored(self, tier_id: str) -> None:
        """Operator heal of a tier restarted in place (the DST)"""
        with self._lock:
            ref = self.tier(tier_id)
            ref.status = TierStatus.LIVE
            self._last_heartbeat[tier_id] = self.clock.now_millis()
        self.forensics.emit("tier_healed", tier=tier_id, replacement=tier_id)

    def drain_mailbox(self) -> int:
        """Process queued one-way messages (heartbeats) through the gate"""
        handled = 0
        while True:
            try:
                envelope = self.ctx.router.recv(self.tier_id)
            except TransportError as e:
                logger.warning(f"GMT mailbox unavailable: {e}")
                return handled
            if envelope is None:
                return handled
            demand = self.service.admit(envelope)
            if demand is not None:
                reply = self.service.dispatch(demand, envelope)
                if not reply.get("ok"):
                    logger.debug(f"Mailbox message from {envelope.source_tier_id} failed: {reply.get('error')}")
            handled += 1

    def step(self, now: int) -> list[str]:
        if not self.available:
            return []
        self.drain_mailbox()
        return self.detect_failures(now)

    def status(self) -> dict[str, Any]:
        with self._lock:
            return {
                "nodes": sorted(self._descriptors),
                "tiers": [r.model_dump(mode="json") for r in self._tiers.values()],
                "geers": sorted(self.geer_pool),
            }
