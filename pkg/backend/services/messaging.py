"""
Tier-to-tier messaging over the transport layer.

Every message is a demand in an envelope. Control and store calls are
system demands whose record names an `op`; replies are system demands
with `op="reply"`. The server half (GatedService) verifies the sender's
credential and the payload/header match before any op runs.
"""

import logging
import threading
import traceback
from typing import Any, Callable

from models.demands import Demand, DemandKind, SystemPayload
from models.transport import Endpoint, Envelope, ProtocolKind
from services.credentials import verify_envelope
from services.demand_service import SignatureSource, encode_demand, system_demand
from services.transport_service import Transport, benchmark_and_select, open_envelope
from utils.errors import (
    CapacityExceeded,
    DuplicateNode,
    EductiveError,
    GmtUnavailable,
    NoCapacity,
    NoDstAvailable,
    StoreUnavailable,
    TierError,
    TransportDown,
    TransportError,
    Unauthenticated,
    UnknownSignature,
    UnknownTier,
)

logger = logging.getLogger(__name__)

INBOX_SUFFIX = "/inbox"

_SIMPLE_REMOTE_ERRORS = {cls.kind: cls for cls in (
    StoreUnavailable, Unauthenticated, DuplicateNode, CapacityExceeded,
    NoDstAvailable, NoCapacity, GmtUnavailable,
)}


def raise_remote(record: dict) -> None:
    """Re-raise the error carried by a failed reply record"""
    kind = record.get("error") or "TierError"
    detail = record.get("detail") or ""
    subject = record.get("subject")
    if kind == UnknownTier.kind:
        raise UnknownTier(subject or detail)
    if kind == UnknownSignature.kind:
        raise UnknownSignature(subject or detail)
    if kind in _SIMPLE_REMOTE_ERRORS:
        raise _SIMPLE_REMOTE_ERRORS[kind](detail)
    raise TierError(f"{kind}: {detail}")


def error_reply(error: EductiveError) -> dict:
    record = {"op": "reply", "ok": False, "error": error.kind, "detail": str(error)}
    subject = getattr(error, "tier_id", None) or getattr(error, "signature", None)
    if subject is not None:
        record["subject"] = subject
    return record


class Router:
    """
    Maps tier ids to endpoints on every available transport; traffic uses
    the currently selected protocol.
    """

    def __init__(self, transports: dict[ProtocolKind, Transport],
                 selected: ProtocolKind = ProtocolKind.IN_PROCESS):
        if selected not in transports:
            raise ValueError(f"protocol {selected.label} has no transport")
        self.transports = transports
        self.selected = selected
        # called after a TransportDown; returns True when another protocol was selected
        self.on_failure: Callable[[], bool] | None = None
        self._endpoints: dict[tuple[str, ProtocolKind], Endpoint] = {}
        self._lock = threading.Lock()

    def bind(self, tier_id: str, handler: Callable[[Envelope], Envelope]) -> None:
        for protocol, transport in self.transports.items():
            endpoint = transport.bind(tier_id, handler)
            with self._lock:
                self._endpoints[(tier_id, protocol)] = endpoint

    def open_mailbox(self, tier_id: str) -> None:
        address = tier_id + INBOX_SUFFIX
        for protocol, transport in self.transports.items():
            endpoint = transport.open_mailbox(address)
            with self._lock:
                self._endpoints[(address, protocol)] = endpoint

    def unbind(self, tier_id: str) -> None:
        for address in (tier_id, tier_id + INBOX_SUFFIX):
            for protocol, transport in self.transports.items():
                with self._lock:
                    endpoint = self._endpoints.pop((address, protocol), None)
                if endpoint is not None:
                    transport.close(endpoint)

    def endpoint(self, address: str, protocol: ProtocolKind | None = None) -> Endpoint:
        protocol = protocol or self.selected
        with self._lock:
            endpoint = self._endpoints.get((address, protocol))
        if endpoint is None:
            raise TransportDown(f"no {protocol.label} endpoint for {address}")
        return endpoint

    @property
    def transport(self) -> Transport:
        return self.transports[self.selected]

    def _with_failover(self, attempt: Callable[[], Any]) -> Any:
        try:
            return attempt()
        except TransportDown as e:
            if len(self.transports) < 2 or self.on_failure is None:
                raise
            failed = self.selected
            logger.warning(f"{failed.label} transport failed ({e}); reselecting")
            if not self.on_failure() or self.selected == failed:
                raise
            return attempt()

    def request(self, envelope: Envelope) -> Envelope:
        def attempt():
            endpoint = self.endpoint(envelope.destination_tier_id)
            return self.transport.request(endpoint, envelope)
        return self._with_failover(attempt)

    def send(self, envelope: Envelope) -> None:
        def attempt():
            endpoint = self.endpoint(envelope.destination_tier_id + INBOX_SUFFIX)
            self.transport.send(endpoint, envelope)
        self._with_failover(attempt)

    def recv(self, tier_id: str, timeout_millis: int = 0) -> Envelope | None:
        endpoint = self.endpoint(tier_id + INBOX_SUFFIX)
        return self.transport.recv(endpoint, timeout_millis)

    def reselect(self, probe_tier_id: str, make_ping: Callable[[], Envelope], probes: int = 3):
        """Benchmark every transport against one tier and switch to the winner"""
        candidates = []
        for protocol, transport in sorted(self.transports.items()):
            try:
                candidates.append((transport, self.endpoint(probe_tier_id, protocol)))
            except TransportDown:
                continue
        measurements, chosen = benchmark_and_select(candidates, probes, make_ping)
        if chosen != self.selected:
            logger.info(f"Switching protocol {self.selected.label} -> {chosen.label}")
        self.selected = chosen
        return measurements, chosen

    def shutdown(self) -> None:
        for transport in self.transports.values():
            transport.shutdown()


class Messenger:
    """Client half for one tier: wraps records in credentialed envelopes"""

    def __init__(self, router: Router, tier_id: str, token: Callable[[], bytes],
                 signatures: SignatureSource, clock):
        self.router = router
        self.tier_id = tier_id
        self.token = token
        self.signatures = signatures
        self.clock = clock

    def envelope(self, demand: Demand, destination: str) -> Envelope:
        return Envelope(
            signature=demand.signature,
            kind=demand.kind,
            source_tier_id=self.tier_id,
            destination_tier_id=destination,
            credential_token=self.token(),
            payload=encode_demand(demand),
            sent_at=self.clock.now_micros(),
        )

    def system_envelope(self, destination: str, record: dict) -> Envelope:
        return self.envelope(system_demand(record, destination, self.signatures), destination)

    def call(self, destination: str, record: dict) -> Any:
        """Request/response; remote errors are re-raised locally"""
        response = self.router.request(self.system_envelope(destination, record))
        reply = open_envelope(response)
        if reply.kind != DemandKind.SYSTEM:
            raise TransportError(f"reply from {destination} is not a system demand")
        body = reply.payload.record
        if not body.get("ok"):
            raise_remote(body)
        return body.get("result")

    def notify(self, destination: str, record: dict) -> None:
        """One-way message into the destination's mailbox"""
        self.router.send(self.system_envelope(destination, record))


OpHandler = Callable[[dict, Envelope], Any]


class GatedService:
    """
    Server half for one tier. Ops listed in `open_ops` are served without a
    credential (node registration); everything else must pass the gate.
    """

    def __init__(self, tier_id: str, secret: bytes, node_of_tier: Callable[[str], str | None],
                 token: Callable[[], bytes], signatures: SignatureSource, clock,
                 forensics=None, open_ops: frozenset[str] = frozenset()):
        self.tier_id = tier_id
        self.secret = secret
        self.node_of_tier = node_of_tier
        self.token = token
        self.signatures = signatures
        self.clock = clock
        self.forensics = forensics
        self.open_ops = open_ops
        self.ops: dict[str, OpHandler] = {}
        self.rejected = 0
        self.processed = 0

    def register(self, op: str, handler: OpHandler) -> None:
        self.ops[op] = handler

    def _reject(self, envelope: Envelope, reason: str, detail: str | None = None) -> None:
        self.rejected += 1
        logger.warning(f"Rejected message at {self.tier_id} from {envelope.source_tier_id!r}: {reason}")
        if self.forensics is not None:
            self.forensics.emit("unauthenticated_message", source=envelope.source_tier_id,
                                reason=reason, detail=detail, signature=envelope.signature.value)

    def admit(self, envelope: Envelope) -> Demand | None:
        """The gate: returns the verified demand, or None after logging the rejection"""
        try:
            demand = open_envelope(envelope)
        except TransportError as e:
            self._reject(envelope, "payload_mismatch", str(e))
            return None
        op = demand.payload.record.get("op") if isinstance(demand.payload, SystemPayload) else None
        if op in self.open_ops:
            return demand
        verdict = verify_envelope(envelope, self.secret, self.node_of_tier)
        if not verdict.accepted:
            self._reject(envelope, verdict.reason)
            return None
        return demand

    def _reply(self, request: Envelope, record: dict) -> Envelope:
        demand = system_demand(record, request.source_tier_id, self.signatures)
        return Envelope(
            signature=demand.signature,
            kind=demand.kind,
            source_tier_id=self.tier_id,
            destination_tier_id=request.source_tier_id,
            credential_token=self.token(),
            payload=encode_demand(demand),
            sent_at=self.clock.now_micros(),
        )

    def dispatch(self, demand: Demand, envelope: Envelope) -> dict:
        if demand.kind != DemandKind.SYSTEM:
            return error_reply(TierError(f"{self.tier_id} only serves system demands"))
        record = demand.payload.record
        handler = self.ops.get(record.get("op"))
        if handler is None:
            return error_reply(TierError(f"unknown op {record.get('op')!r}"))
        try:
            result = handler(record, envelope)
            self.processed += 1
            return {"op": "reply", "ok": True, "result": result}
        except EductiveError as e:
            return error_reply(e)
        except Exception as e:
            logger.error(f"Op {record.get('op')} failed at {self.tier_id}: {e}")
            logger.error(f"Traceback: {traceback.format_exc()}")
            return error_reply(TierError(f"internal error: {e}"))

    def handle(self, envelope: Envelope) -> Envelope:
        """Transport handler: gate, dispatch, reply"""
        demand = self.admit(envelope)
        if demand is None:
            return self._reply(envelope, error_reply(Unauthenticated("message rejected")))
        return self._reply(envelope, self.dispatch(demand, envelope))
