import random

import pytest

from models.demands import DemandKind, DemandSignature
from models.transport import Envelope, ProtocolKind
from services.demand_service import encode_demand, procedural_demand, system_demand
from services.forensic_log import ForensicLog
from services.transport_service import (
    LENGTH_PREFIX,
    MAX_FRAME_BYTES,
    InProcessTransport,
    LinkTable,
    TcpLoopbackTransport,
    benchmark_and_select,
    decode_envelope,
    encode_envelope,
    frame_envelope,
    open_envelope,
    unframe,
)
from utils.errors import AllProtocolsDown, FrameFormatError, FrameTooLarge, TransportDown


def _envelope(destination="T2", record=None, token=b"token"):
    demand = system_demand(record or {"op": "ping"}, destination)
    return Envelope(
        signature=demand.signature,
        kind=demand.kind,
        source_tier_id="T3",
        destination_tier_id=destination,
        credential_token=token,
        payload=encode_demand(demand),
        sent_at=1234,
    )


def _echo(envelope):
    return envelope


def test_frame_carries_big_endian_length():
    envelope = _envelope()
    frame = frame_envelope(envelope)
    (length,) = LENGTH_PREFIX.unpack_from(frame)
    assert length == len(frame) - 4
    assert frame[4] == int(envelope.kind)
    assert unframe(frame) == envelope


def test_decode_rejects_trailing_bytes():
    with pytest.raises(FrameFormatError):
        decode_envelope(encode_envelope(_envelope()) + b"\x00")


def test_truncated_frame_is_rejected():
    frame = frame_envelope(_envelope())
    with pytest.raises(FrameFormatError):
        unframe(frame[:-3])
    with pytest.raises(FrameFormatError):
        unframe(frame[:2])


def test_oversized_length_prefix_is_rejected():
    with pytest.raises(FrameTooLarge):
        unframe(LENGTH_PREFIX.pack(32 * 1024 * 1024) + b"x")


def test_payload_must_match_header():
    envelope = _envelope()
    other = system_demand({"op": "dump"}, "T2")
    tampered = Envelope(envelope.signature, envelope.kind, envelope.source_tier_id,
                        envelope.destination_tier_id, envelope.credential_token,
                        encode_demand(other), envelope.sent_at)
    assert open_envelope(envelope).payload.record == {"op": "ping"}
    with pytest.raises(FrameFormatError):
        open_envelope(tampered)


def test_in_process_request_round_trip(sim_clock):
    transport = InProcessTransport(sim_clock)
    endpoint = transport.bind("T2", _echo)
    envelope = _envelope()
    assert transport.request(endpoint, envelope) == envelope


def test_mailbox_delivers_in_order(sim_clock):
    transport = InProcessTransport(sim_clock)
    endpoint = transport.open_mailbox("T2/inbox")
    first, second = _envelope(record={"op": "a"}), _envelope(record={"op": "b"})
    transport.send(endpoint, first)
    transport.send(endpoint, second)
    assert transport.recv(endpoint) == first
    assert transport.recv(endpoint) == second
    assert transport.recv(endpoint) is None


def test_down_link_raises(sim_clock):
    links = LinkTable(seed=1)
    transport = InProcessTransport(sim_clock, links)
    endpoint = transport.bind("T2", _echo)
    links.set("T2", down=True)
    with pytest.raises(TransportDown):
        transport.request(endpoint, _envelope())
    links.clear("T2")
    transport.request(endpoint, _envelope())


def test_seeded_drops_are_reproducible():
    def decisions(seed):
        links = LinkTable(seed)
        links.set("T2", drop_probability=0.5)
        return [links.should_drop("T2") for _ in range(50)]

    assert decisions(7) == decisions(7)
    assert any(decisions(7)) and not all(decisions(7))


def _mailbox(sim_clock):
    log = ForensicLog(sim_clock)
    transport = InProcessTransport(sim_clock, forensics=log.emitter("T2"))
    return transport, transport.open_mailbox("T2/inbox"), log


def test_malformed_mailbox_frame_is_dropped(sim_clock):
    transport, endpoint, log = _mailbox(sim_clock)
    transport.inject_raw(endpoint, b"\x00\x00\x00\x05junk!")
    transport.send(endpoint, _envelope())
    assert transport.recv(endpoint).destination_tier_id == "T2"
    assert log.count("malformed_frame") == 1


def test_one_flipped_payload_byte_is_dropped(sim_clock):
    transport, endpoint, log = _mailbox(sim_clock)
    frame = frame_envelope(_envelope())
    assert frame.count(b"ping") == 1
    transport.inject_raw(endpoint, frame.replace(b"ping", b"piog"))
    assert transport.recv(endpoint) is None
    assert log.count("malformed_frame") == 1
    assert "does not hash" in log.events("malformed_frame")[0].properties["reason"]


def test_flipped_procedure_name_is_dropped(sim_clock):
    transport, endpoint, log = _mailbox(sim_clock)
    demand = procedural_demand("square", (7,))
    envelope = Envelope(demand.signature, demand.kind, "T3", "T2", b"token", encode_demand(demand), 99)
    transport.inject_raw(endpoint, frame_envelope(envelope).replace(b"square", b"sqvare"))
    transport.inject_raw(endpoint, frame_envelope(envelope))
    assert transport.recv(endpoint) == envelope
    assert transport.recv(endpoint) is None
    assert log.count("malformed_frame") == 1


def test_envelopes_survive_framing():
    generator = random.Random(20)
    sizes = [0, 1, 255, 70_000]
    for kind in DemandKind:
        for size in sizes:
            envelope = Envelope(
                signature=DemandSignature(f"{generator.getrandbits(128):032x}"),
                kind=kind,
                source_tier_id=f"T{generator.randint(1, 99)}",
                destination_tier_id="",
                credential_token=generator.randbytes(generator.randint(0, 64)),
                payload=generator.randbytes(size),
                sent_at=generator.getrandbits(64),
            )
            assert unframe(frame_envelope(envelope)) == envelope


def test_send_over_the_frame_limit_raises(sim_clock):
    transport = InProcessTransport(sim_clock)
    endpoint = transport.open_mailbox("T2/inbox")
    big = Envelope(_envelope().signature, DemandKind.SYSTEM, "T3", "T2", b"token",
                   bytes(MAX_FRAME_BYTES + 1), 0)
    with pytest.raises(FrameTooLarge):
        transport.send(endpoint, big)
    assert transport.recv(endpoint) is None


def _candidates(sim_clock, tcp_latency, in_process_latency=0):
    in_process = InProcessTransport(sim_clock, latency_micros=in_process_latency)
    tcp = TcpLoopbackTransport(sim_clock, latency_micros=tcp_latency)
    return [(in_process, in_process.bind("T2", _echo)), (tcp, tcp.bind("T2", _echo))]


def test_selection_prefers_lowest_median(sim_clock):
    candidates = _candidates(sim_clock, tcp_latency=5000)
    try:
        measurements, chosen = benchmark_and_select(candidates, 3, _envelope)
        assert chosen == ProtocolKind.IN_PROCESS
        assert [m.median_micros for m in measurements] == [0.0, 5000.0]
    finally:
        candidates[1][0].shutdown()


def test_selection_falls_back_when_a_protocol_is_disabled(sim_clock):
    candidates = _candidates(sim_clock, tcp_latency=5000)
    candidates[0][0].enabled = False
    try:
        measurements, chosen = benchmark_and_select(candidates, 3, _envelope)
        assert chosen == ProtocolKind.TCP_LOOPBACK
        assert measurements[0].failures == 3
    finally:
        candidates[1][0].shutdown()


def test_equal_medians_go_to_the_lower_protocol(sim_clock):
    candidates = _candidates(sim_clock, tcp_latency=4000, in_process_latency=4000)
    try:
        measurements, chosen = benchmark_and_select(list(reversed(candidates)), 3, _envelope)
        assert [m.median_micros for m in measurements] == [4000.0, 4000.0]
        assert chosen == ProtocolKind.IN_PROCESS
    finally:
        candidates[1][0].shutdown()


def test_selection_is_scale_invariant(sim_clock):
    candidates = _candidates(sim_clock, tcp_latency=50_000, in_process_latency=10_000)
    try:
        _, chosen = benchmark_and_select(candidates, 3, _envelope)
        assert chosen == ProtocolKind.IN_PROCESS
    finally:
        candidates[1][0].shutdown()


def test_selection_needs_three_probes(sim_clock):
    with pytest.raises(ValueError):
        benchmark_and_select([], 2, _envelope)


def test_all_protocols_down(sim_clock):
    transport = InProcessTransport(sim_clock)
    endpoint = transport.bind("T2", _echo)
    transport.enabled = False
    with pytest.raises(AllProtocolsDown):
        benchmark_and_select([(transport, endpoint)], 3, _envelope)
