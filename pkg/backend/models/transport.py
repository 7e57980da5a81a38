from dataclasses import dataclass
from enum import IntEnum

from models.demands import DemandKind, DemandSignature


class ProtocolKind(IntEnum):
    """Enum order is the selection tie-break order"""
    IN_PROCESS = 1
    TCP_LOOPBACK = 2

    @property
    def label(self) -> str:
        return {ProtocolKind.IN_PROCESS: "inProcess", ProtocolKind.TCP_LOOPBACK: "tcpLoopback"}[self]

    @classmethod
    def parse(cls, text: str) -> "ProtocolKind":
        for kind in cls:
            if text in (kind.label, kind.name.lower(), kind.label.lower()):
                return kind
        raise ValueError(f"unknown protocol {text!r}")


@dataclass(frozen=True)
class Endpoint:
    protocol: ProtocolKind
    address: str


@dataclass(frozen=True)
class Envelope:
    signature: DemandSignature
    kind: DemandKind
    source_tier_id: str
    destination_tier_id: str
    credential_token: bytes
    payload: bytes
    sent_at: int


@dataclass(frozen=True)
class LatencyMeasurement:
    protocol: ProtocolKind
    median_micros: float | None
    failures: int
    probes: int


@dataclass
class LinkConditions:
    """Per-destination fault injection: added latency, drop probability, down flag"""
    latency_micros: int = 0
    drop_probability: float = 0.0
    down: bool = False
