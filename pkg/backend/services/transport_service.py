"""
Demand migration layer: one envelope format over pluggable transports.

Wire format (bit-exact for tcpLoopback): 4-byte big-endian length, then
the canonical envelope encoding: 1 kind byte, 16-byte signature,
length-prefixed UTF-8 source and destination tier ids, length-prefixed
credential token, length-prefixed demand payload, 8-byte big-endian
send timestamp in microseconds.
"""

import logging
import random
import socket
import socketserver
import statistics
import struct
import threading
from collections import deque
from typing import Callable

from models.demands import Demand, DemandKind, DemandSignature
from models.transport import Endpoint, Envelope, LatencyMeasurement, LinkConditions, ProtocolKind
from services.demand_service import decode_demand, signature_matches
from utils.canonical import CanonicalDecodeError, CanonicalReader, CanonicalWriter
from utils.errors import AllProtocolsDown, FrameFormatError, FrameTooLarge, TransportDown, TransportError

logger = logging.getLogger(__name__)

MAX_FRAME_BYTES = 16 * 1024 * 1024
LENGTH_PREFIX = struct.Struct(">I")

Handler = Callable[[Envelope], Envelope]


# -------------------------------------------------------------------- codec

def encode_envelope(envelope: Envelope) -> bytes:
    if len(envelope.payload) + len(envelope.credential_token) > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"payload of {len(envelope.payload)} bytes exceeds {MAX_FRAME_BYTES}")
    body = (CanonicalWriter()
            .u8(int(envelope.kind))
            .raw(envelope.signature.raw)
            .text(envelope.source_tier_id)
            .text(envelope.destination_tier_id)
            .blob(envelope.credential_token)
            .blob(envelope.payload)
            .u64(envelope.sent_at)
            .getvalue())
    if len(body) > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"frame of {len(body)} bytes exceeds {MAX_FRAME_BYTES}")
    return body


def frame_envelope(envelope: Envelope) -> bytes:
    body = encode_envelope(envelope)
    return LENGTH_PREFIX.pack(len(body)) + body


def decode_envelope(body: bytes) -> Envelope:
    reader = CanonicalReader(body)
    try:
        kind = DemandKind(reader.u8())
        signature = DemandSignature.from_bytes(reader.raw(16))
        envelope = Envelope(
            signature=signature,
            kind=kind,
            source_tier_id=reader.text(),
            destination_tier_id=reader.text(),
            credential_token=reader.blob(),
            payload=reader.blob(),
            sent_at=reader.u64(),
        )
        reader.expect_end()
    except (CanonicalDecodeError, ValueError) as e:
        raise FrameFormatError(f"malformed envelope: {e}") from e
    return envelope


def unframe(data: bytes) -> Envelope:
    if len(data) < LENGTH_PREFIX.size:
        raise FrameFormatError("frame shorter than its length prefix")
    (length,) = LENGTH_PREFIX.unpack_from(data)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"frame length {length} exceeds {MAX_FRAME_BYTES}")
    if len(data) - LENGTH_PREFIX.size != length:
        raise FrameFormatError(f"frame length {length} does not match {len(data) - LENGTH_PREFIX.size} bytes")
    return decode_envelope(data[LENGTH_PREFIX.size:])


def open_envelope(envelope: Envelope) -> Demand:
    """Decode the payload and check it against the header"""
    try:
        demand = decode_demand(envelope.payload)
    except (CanonicalDecodeError, ValueError, TypeError) as e:
        raise FrameFormatError(f"payload does not decode to a demand: {e}") from e
    if demand.signature != envelope.signature or demand.kind != envelope.kind:
        raise FrameFormatError("payload does not match the envelope header")
    if not signature_matches(demand):
        raise FrameFormatError("payload does not hash to its signature")
    return demand


# ---------------------------------------------------------------- link table

class LinkTable:
    """Fault injection keyed by destination tier id; drops use a seeded generator"""

    def __init__(self, seed: int | None = None):
        self._random = random.Random(seed)
        self._links: dict[str, LinkConditions] = {}
        self._lock = threading.Lock()

    def conditions(self, tier_id: str) -> LinkConditions:
        with self._lock:
            return self._links.get(tier_id, LinkConditions())

    def set(self, tier_id: str, latency_micros: int | None = None,
            drop_probability: float | None = None, down: bool | None = None) -> LinkConditions:
        with self._lock:
            current = self._links.setdefault(tier_id, LinkConditions())
            if latency_micros is not None:
                current.latency_micros = latency_micros
            if drop_probability is not None:
                current.drop_probability = drop_probability
            if down is not None:
                current.down = down
            return current

    def clear(self, tier_id: str) -> None:
        with self._lock:
            self._links.pop(tier_id, None)

    def should_drop(self, tier_id: str) -> bool:
        with self._lock:
            conditions = self._links.get(tier_id)
            if conditions is None or conditions.drop_probability <= 0:
                return False
            return self._random.random() < conditions.drop_probability


# --------------------------------------------------------------- transports

class Transport:
    """Common behavior: link checks, latency injection and frame validation"""

    protocol: ProtocolKind

    def __init__(self, clock, links: LinkTable | None = None, forensics=None,
                 latency_micros: int = 0):
        self.clock = clock
        self.links = links or LinkTable()
        self.forensics = forensics
        self.latency_micros = latency_micros
        self.enabled = True
        self.last_rtt_micros = 0

    def _emit(self, name: str, **properties) -> None:
        if self.forensics is not None:
            self.forensics.emit(name, protocol=self.protocol.label, **properties)

    def _check_link(self, envelope: Envelope) -> LinkConditions:
        if not self.enabled:
            raise TransportDown(f"{self.protocol.label} transport is disabled")
        conditions = self.links.conditions(envelope.destination_tier_id)
        if conditions.down:
            raise TransportDown(f"link to {envelope.destination_tier_id} is down")
        return conditions

    def _delay_micros(self, conditions: LinkConditions) -> int:
        return self.latency_micros + conditions.latency_micros

    def _accept_frame(self, data: bytes, check_payload: bool = False) -> Envelope | None:
        """Mailbox frames must also carry the demand their header names; request frames go through the gate"""
        try:
            envelope = unframe(data)
            if check_payload:
                open_envelope(envelope)
            return envelope
        except TransportError as e:
            logger.warning(f"Dropping malformed frame on {self.protocol.label}: {e}")
            self._emit("malformed_frame", reason=str(e))
            return None

    def request(self, endpoint: Endpoint, envelope: Envelope) -> Envelope:
        """Request/response round trip; the measured RTT lands in last_rtt_micros"""
        conditions = self._check_link(envelope)
        if self.links.should_drop(envelope.destination_tier_id):
            raise TransportDown(f"request to {envelope.destination_tier_id} was dropped")
        delay = self._delay_micros(conditions)
        start = self.clock.now_micros()
        if delay and not self.clock.simulated:
            self.clock.sleep(delay / 1000.0)
        response = self._round_trip(endpoint, frame_envelope(envelope))
        elapsed = self.clock.now_micros() - start
        self.last_rtt_micros = elapsed + (delay if self.clock.simulated else 0)
        return response

    def send(self, endpoint: Endpoint, envelope: Envelope) -> None:
        """sendEnvelope: at-most-once one-way handoff"""
        conditions = self._check_link(envelope)
        data = frame_envelope(envelope)
        if self.links.should_drop(envelope.destination_tier_id):
            logger.debug(f"Dropped one-way envelope to {envelope.destination_tier_id}")
            return
        self._deliver(endpoint, data, self.clock.now_micros() + self._delay_micros(conditions))

    # subclasses implement the rest
    def bind(self, address: str, handler: Handler) -> Endpoint:
        raise NotImplementedError

    def open_mailbox(self, address: str) -> Endpoint:
        raise NotImplementedError

    def recv(self, endpoint: Endpoint, timeout_millis: int = 0) -> Envelope | None:
        raise NotImplementedError

    def close(self, endpoint: Endpoint) -> None:
        raise NotImplementedError

    def shutdown(self) -> None:
        pass

    def _round_trip(self, endpoint: Endpoint, data: bytes) -> Envelope:
        raise NotImplementedError

    def _deliver(self, endpoint: Endpoint, data: bytes, deliver_at: int) -> None:
        raise NotImplementedError


class _Mailbox:
    def __init__(self):
        self.frames: deque[tuple[int, bytes]] = deque()
        self.ready = threading.Condition()


class InProcessTransport(Transport):
    """Queues inside one process; FIFO per destination"""

    protocol = ProtocolKind.IN_PROCESS

    def __init__(self, clock, links: LinkTable | None = None, forensics=None, latency_micros: int = 0):
        super().__init__(clock, links, forensics, latency_micros)
        self._handlers: dict[str, Handler] = {}
        self._mailboxes: dict[str, _Mailbox] = {}
        self._lock = threading.Lock()

    def bind(self, address: str, handler: Handler) -> Endpoint:
        with self._lock:
            self._handlers[address] = handler
        return Endpoint(self.protocol, address)

    def open_mailbox(self, address: str) -> Endpoint:
        with self._lock:
            self._mailboxes.setdefault(address, _Mailbox())
        return Endpoint(self.protocol, address)

    def close(self, endpoint: Endpoint) -> None:
        with self._lock:
            self._handlers.pop(endpoint.address, None)
            self._mailboxes.pop(endpoint.address, None)

    def _round_trip(self, endpoint: Endpoint, data: bytes) -> Envelope:
        with self._lock:
            handler = self._handlers.get(endpoint.address)
        if handler is None:
            raise TransportDown(f"no listener at {endpoint.address}")
        request = unframe(data)
        response = handler(request)
        return unframe(frame_envelope(response))

    def _deliver(self, endpoint: Endpoint, data: bytes, deliver_at: int) -> None:
        with self._lock:
            mailbox = self._mailboxes.get(endpoint.address)
        if mailbox is None:
            raise TransportDown(f"endpoint {endpoint.address} is closed")
        with mailbox.ready:
            mailbox.frames.append((deliver_at, data))
            mailbox.ready.notify()

    def inject_raw(self, endpoint: Endpoint, data: bytes) -> None:
        """Place raw bytes in a mailbox, bypassing the encoder (fault tests)"""
        self._deliver(endpoint, data, self.clock.now_micros())

    def recv(self, endpoint: Endpoint, timeout_millis: int = 0) -> Envelope | None:
        """recvEnvelope: next valid envelope or None; malformed frames are dropped"""
        with self._lock:
            mailbox = self._mailboxes.get(endpoint.address)
        if mailbox is None:
            raise TransportDown(f"endpoint {endpoint.address} is closed")
        deadline = self.clock.now_millis() + timeout_millis
        while True:
            with mailbox.ready:
                data = None
                if mailbox.frames and mailbox.frames[0][0] <= self.clock.now_micros():
                    data = mailbox.frames.popleft()[1]
                elif self.clock.simulated or self.clock.now_millis() >= deadline:
                    return None
                else:
                    mailbox.ready.wait(timeout=max(deadline - self.clock.now_millis(), 1) / 1000.0)
                    continue
            envelope = self._accept_frame(data, check_payload=True)
            if envelope is not None:
                return envelope


class _FramedHandler(socketserver.BaseRequestHandler):
    def handle(self):
        transport: TcpLoopbackTransport = self.server.transport
        while True:
            data = _read_frame(self.request)
            if data is None:
                return
            envelope = transport._accept_frame(data, check_payload=self.server.handler is None)
            if envelope is None:
                return
            if self.server.handler is None:
                transport._enqueue(self.server.address_key, envelope)
                continue
            try:
                response = self.server.handler(envelope)
                self.request.sendall(frame_envelope(response))
            except Exception as e:
                logger.error(f"TCP handler failed at {self.server.address_key}: {e}")
                return


class _ThreadingServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def _read_exact(sock: socket.socket, size: int) -> bytes | None:
    buffer = b""
    while len(buffer) < size:
        chunk = sock.recv(size - len(buffer))
        if not chunk:
            return None
        buffer += chunk
    return buffer


def _read_frame(sock: socket.socket) -> bytes | None:
    header = _read_exact(sock, LENGTH_PREFIX.size)
    if header is None:
        return None
    (length,) = LENGTH_PREFIX.unpack(header)
    if length > MAX_FRAME_BYTES:
        return header
    body = _read_exact(sock, length)
    if body is None:
        return None
    return header + body


class TcpLoopbackTransport(Transport):
    """Length-prefixed frames over 127.0.0.1 sockets"""

    protocol = ProtocolKind.TCP_LOOPBACK

    def __init__(self, clock, links: LinkTable | None = None, forensics=None,
                 latency_micros: int = 0, timeout_seconds: float = 5.0):
        super().__init__(clock, links, forensics, latency_micros)
        self.timeout_seconds = timeout_seconds
        self._servers: dict[str, _ThreadingServer] = {}
        self._inboxes: dict[str, deque[Envelope]] = {}
        self._lock = threading.Lock()

    def _serve(self, key: str, handler: Handler | None) -> Endpoint:
        server = _ThreadingServer(("127.0.0.1", 0), _FramedHandler)
        server.transport = self
        server.handler = handler
        server.address_key = key
        host, port = server.server_address
        thread = threading.Thread(target=server.serve_forever, name=f"tcp-{key}", daemon=True)
        thread.start()
        address = f"{host}:{port}"
        with self._lock:
            self._servers[address] = server
        logger.debug(f"TCP listener for {key} on {address}")
        return Endpoint(self.protocol, address)

    def bind(self, address: str, handler: Handler) -> Endpoint:
        return self._serve(address, handler)

    def open_mailbox(self, address: str) -> Endpoint:
        endpoint = self._serve(address, None)
        with self._lock:
            self._inboxes[endpoint.address] = deque()
            self._servers[endpoint.address].address_key = endpoint.address
        return endpoint

    def _enqueue(self, key: str, envelope: Envelope) -> None:
        with self._lock:
            inbox = self._inboxes.get(key)
            if inbox is not None:
                inbox.append(envelope)

    def close(self, endpoint: Endpoint) -> None:
        with self._lock:
            server = self._servers.pop(endpoint.address, None)
            self._inboxes.pop(endpoint.address, None)
        if server is not None:
            server.shutdown()
            server.server_close()

    def shutdown(self) -> None:
        for address in list(self._servers):
            self.close(Endpoint(self.protocol, address))

    def _connect(self, endpoint: Endpoint) -> socket.socket:
        host, _, port = endpoint.address.rpartition(":")
        try:
            return socket.create_connection((host, int(port)), timeout=self.timeout_seconds)
        except (OSError, ValueError) as e:
            raise TransportDown(f"cannot connect to {endpoint.address}: {e}") from e

    def _round_trip(self, endpoint: Endpoint, data: bytes) -> Envelope:
        with self._connect(endpoint) as sock:
            try:
                sock.sendall(data)
                response = _read_frame(sock)
            except OSError as e:
                raise TransportDown(f"connection to {endpoint.address} failed: {e}") from e
        if response is None:
            raise TransportDown(f"{endpoint.address} closed the connection")
        return unframe(response)

    def _deliver(self, endpoint: Endpoint, data: bytes, deliver_at: int) -> None:
        with self._connect(endpoint) as sock:
            try:
                sock.sendall(data)
            except OSError as e:
                raise TransportDown(f"send to {endpoint.address} failed: {e}") from e

    def recv(self, endpoint: Endpoint, timeout_millis: int = 0) -> Envelope | None:
        deadline = self.clock.now_millis() + timeout_millis
        while True:
            with self._lock:
                inbox = self._inboxes.get(endpoint.address)
                if inbox is None:
                    raise TransportDown(f"endpoint {endpoint.address} is closed")
                if inbox:
                    return inbox.popleft()
            if self.clock.simulated or self.clock.now_millis() >= deadline:
                return None
            threading.Event().wait(0.001)


def create_transport(protocol: ProtocolKind, clock, links: LinkTable | None = None,
                     forensics=None, latency_micros: int = 0) -> Transport:
    if protocol == ProtocolKind.IN_PROCESS:
        return InProcessTransport(clock, links, forensics, latency_micros)
    return TcpLoopbackTransport(clock, links, forensics, latency_micros)


# ---------------------------------------------------------------- selection

def benchmark_and_select(candidates: list[tuple[Transport, Endpoint]], probes: int,
                         make_ping: Callable[[], Envelope]) -> tuple[list[LatencyMeasurement], ProtocolKind]:
    """
    Probe every candidate `probes` times and pick the protocol with the
    lowest median round trip among those with no failed probe; ties go to
    the lower enum value. If every candidate lost some probes, the one with
    the fewest failures (then lowest median) wins.
    """
    if probes < 3:
        raise ValueError("benchmarking needs at least 3 probes")
    measurements = []
    for transport, endpoint in candidates:
        samples, failures = [], 0
        for _ in range(probes):
            try:
                transport.request(endpoint, make_ping())
                samples.append(transport.last_rtt_micros)
            except TransportError as e:
                failures += 1
                logger.debug(f"Probe over {transport.protocol.label} failed: {e}")
        median = float(statistics.median(samples)) if samples else None
        measurements.append(LatencyMeasurement(transport.protocol, median, failures, probes))
    reachable = [m for m in measurements if m.median_micros is not None]
    if not reachable:
        raise AllProtocolsDown("every candidate protocol failed all probes")
    clean = [m for m in reachable if m.failures == 0]
    if clean:
        chosen = min(clean, key=lambda m: (m.median_micros, m.protocol))
    else:
        chosen = min(reachable, key=lambda m: (m.failures, m.median_micros, m.protocol))
    logger.info(f"Selected protocol {chosen.protocol.label} (median {chosen.median_micros} us)")
    return measurements, chosen.protocol
