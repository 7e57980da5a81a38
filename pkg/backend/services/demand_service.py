"""
Demand identity and serialization.

The canonical payload encoding is the hash input for deterministic
signatures: kind byte, geerId, node id or procedure name, sorted context
pairs, then argument values, all length-prefixed and big-endian.
"""

import hashlib
import logging
import random
import threading
import uuid
from typing import Any

from models.demands import (
    Context,
    Demand,
    DemandKind,
    DemandSignature,
    IntensionalPayload,
    ProceduralPayload,
    ResourcePayload,
    SystemPayload,
)
from utils.canonical import CanonicalDecodeError, CanonicalReader, CanonicalWriter

logger = logging.getLogger(__name__)


class SignatureSource:
    """
    Fresh 128-bit ids for system demands. Seeded in simulation so two runs
    with the same seed issue the same sequence.
    """

    def __init__(self, seed: int | None = None):
        self._random = random.Random(seed) if seed is not None else None
        self._lock = threading.Lock()

    def fresh(self) -> DemandSignature:
        if self._random is None:
            return DemandSignature(uuid.uuid4().hex)
        with self._lock:
            return DemandSignature(f"{self._random.getrandbits(128):032x}")


_default_source = SignatureSource()


def context_override(ctx: Context, dim: str, tag: int, declared=None) -> Context:
    return ctx.override(dim, tag, declared)


def _write_context(writer: CanonicalWriter, context: Context) -> None:
    writer.u32(len(context.bindings))
    for dim, tag in context.bindings:
        writer.text(dim).i64(tag)


def _read_context(reader: CanonicalReader) -> Context:
    pairs = []
    for _ in range(reader.u32()):
        dim = reader.text()
        pairs.append((dim, reader.i64()))
    if pairs != sorted(pairs) or len({d for d, _ in pairs}) != len(pairs):
        raise CanonicalDecodeError(reader.position, "context pairs not canonical")
    return Context(tuple(pairs))


def encode_payload(kind: DemandKind, payload: Any, geer_id: str | None) -> bytes:
    writer = CanonicalWriter().u8(int(kind)).text(geer_id or "")
    if kind == DemandKind.INTENSIONAL:
        writer.text(str(payload.node_id))
        _write_context(writer, payload.context)
        writer.u32(0)
    elif kind == DemandKind.PROCEDURAL:
        writer.text(payload.procedure)
        _write_context(writer, payload.context)
        writer.u32(len(payload.args))
        for arg in payload.args:
            writer.value(arg)
    elif kind == DemandKind.SYSTEM:
        writer.text(payload.nonce)
        _write_context(writer, Context())
        writer.u32(1).value(payload.record)
    else:
        writer.text(payload.geer_id)
        _write_context(writer, Context())
        writer.u32(0)
    return writer.getvalue()


def decode_payload(reader: CanonicalReader) -> tuple[DemandKind, Any, str | None]:
    start = reader.position
    try:
        kind = DemandKind(reader.u8())
    except ValueError:
        raise CanonicalDecodeError(start, "unknown demand kind")
    geer_id = reader.text() or None
    name = reader.text()
    context = _read_context(reader)
    args = [reader.value() for _ in range(reader.u32())]
    if kind == DemandKind.INTENSIONAL:
        if not name.isdigit() or args:
            raise CanonicalDecodeError(start, "malformed intensional payload")
        return kind, IntensionalPayload(int(name), context), geer_id
    if kind == DemandKind.PROCEDURAL:
        return kind, ProceduralPayload(name, tuple(args), context), geer_id
    if kind == DemandKind.SYSTEM:
        if len(args) != 1 or not isinstance(args[0], dict):
            raise CanonicalDecodeError(start, "malformed system payload")
        return kind, SystemPayload(args[0], name), geer_id
    if args or not name:
        raise CanonicalDecodeError(start, "malformed resource payload")
    return kind, ResourcePayload(name), geer_id


def signature_of(kind: DemandKind, payload: Any, context: Context | None = None,
                 geer_id: str | None = None) -> DemandSignature:
    """
    SHA-256 of the canonical payload, truncated to 128 bits. System payloads
    carry a fresh nonce, so their signatures are unique per issuance yet
    still bound to the record they travel with.
    """
    if context is not None and kind == DemandKind.INTENSIONAL:
        payload = IntensionalPayload(payload.node_id, context)
    elif context is not None and kind == DemandKind.PROCEDURAL:
        payload = ProceduralPayload(payload.procedure, payload.args, context)
    digest = hashlib.sha256(encode_payload(kind, payload, geer_id)).digest()
    return DemandSignature.from_bytes(digest[:16])


def make_demand(kind: DemandKind, payload: Any, geer_id: str | None = None,
                destination_tier_id: str = "") -> Demand:
    signature = signature_of(kind, payload, geer_id=geer_id)
    return Demand(signature, kind, payload, geer_id, destination_tier_id)


def procedural_demand(procedure: str, args, context: Context | None = None,
                      geer_id: str | None = None, destination_tier_id: str = "") -> Demand:
    payload = ProceduralPayload(procedure, tuple(args), context or Context())
    return make_demand(DemandKind.PROCEDURAL, payload, geer_id, destination_tier_id)


def system_demand(record: dict, destination_tier_id: str = "",
                  source: SignatureSource | None = None) -> Demand:
    nonce = (source or _default_source).fresh().value
    return make_demand(DemandKind.SYSTEM, SystemPayload(record, nonce), None, destination_tier_id)


def encode_demand(demand: Demand) -> bytes:
    """Wire form of a demand: signature, destination, then the canonical payload"""
    return (CanonicalWriter()
            .raw(demand.signature.raw)
            .text(demand.destination_tier_id)
            .raw(encode_payload(demand.kind, demand.payload, demand.geer_id))
            .getvalue())


def decode_demand(data: bytes) -> Demand:
    reader = CanonicalReader(data)
    signature = DemandSignature.from_bytes(reader.raw(16))
    destination = reader.text()
    kind, payload, geer_id = decode_payload(reader)
    reader.expect_end()
    return Demand(signature, kind, payload, geer_id, destination)


def signature_matches(demand: Demand) -> bool:
    return signature_of(demand.kind, demand.payload, geer_id=demand.geer_id) == demand.signature
