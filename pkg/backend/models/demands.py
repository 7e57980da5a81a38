"""
Demand model: evaluation contexts, demand identities, store entries and
warehouse keys.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Iterable, Mapping

from utils.errors import EvaluationTypeError, UnknownDimension


class DemandKind(IntEnum):
    INTENSIONAL = 1
    PROCEDURAL = 2
    SYSTEM = 3
    RESOURCE = 4

    @property
    def label(self) -> str:
        return self.name.lower()


class DemandState(str, Enum):
    NOT_FOUND = "notFound"
    PENDING = "pending"
    IN_PROCESS = "inProcess"
    COMPUTED = "computed"


class DeliveryOutcome(str, Enum):
    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"
    CONFLICT = "conflict"


@dataclass(frozen=True)
class Context:
    """Dimension -> integer tag bindings, kept sorted by dimension name"""
    bindings: tuple[tuple[str, int], ...] = ()

    @classmethod
    def of(cls, mapping: Mapping[str, int] | None = None, **tags: int) -> "Context":
        merged = dict(mapping or {})
        merged.update(tags)
        for dim, tag in merged.items():
            if isinstance(tag, bool) or not isinstance(tag, int):
                raise EvaluationTypeError(f"tag for dimension '{dim}' must be an integer, got {tag!r}")
        return cls(tuple(sorted(merged.items())))

    def get(self, dim: str) -> int:
        for name, tag in self.bindings:
            if name == dim:
                return tag
        return 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.bindings)

    def override(self, dim: str, tag: int, declared: Iterable[str] | None = None) -> "Context":
        if declared is not None and dim not in declared:
            raise UnknownDimension(dim)
        if isinstance(tag, bool) or not isinstance(tag, int):
            raise EvaluationTypeError(f"tag for dimension '{dim}' must be an integer, got {tag!r}")
        bindings = self.as_dict()
        bindings[dim] = tag
        return Context(tuple(sorted(bindings.items())))

    def restrict(self, dimensions: Iterable[str]) -> tuple[int, ...]:
        """Full tag vector over `dimensions` (unbound reads as 0)"""
        return tuple(self.get(d) for d in dimensions)

    def reads_equal(self, other: "Context") -> bool:
        names = {d for d, _ in self.bindings} | {d for d, _ in other.bindings}
        return all(self.get(d) == other.get(d) for d in names)

    def __str__(self) -> str:
        return "{" + ", ".join(f"{d}:{t}" for d, t in self.bindings) + "}"


@dataclass(frozen=True)
class DemandSignature:
    value: str

    def __post_init__(self):
        if len(self.value) != 32 or any(c not in "0123456789abcdef" for c in self.value):
            raise ValueError(f"signature must be 32 lowercase hex chars, got {self.value!r}")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DemandSignature":
        return cls(raw.hex())

    @property
    def raw(self) -> bytes:
        return bytes.fromhex(self.value)

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class IntensionalPayload:
    node_id: int
    context: Context


@dataclass(frozen=True)
class ProceduralPayload:
    procedure: str
    args: tuple[Any, ...]
    context: Context = Context()


@dataclass(frozen=True)
class SystemPayload:
    """Protocol record, e.g. {"op": "tier_registration", ...}; the nonce makes each issuance distinct"""
    record: dict
    nonce: str = ""


@dataclass(frozen=True)
class ResourcePayload:
    geer_id: str


PAYLOAD_TYPES = {
    DemandKind.INTENSIONAL: IntensionalPayload,
    DemandKind.PROCEDURAL: ProceduralPayload,
    DemandKind.SYSTEM: SystemPayload,
    DemandKind.RESOURCE: ResourcePayload,
}


@dataclass(frozen=True)
class Claim:
    worker_id: str
    lease_deadline: int


@dataclass
class Demand:
    signature: DemandSignature
    kind: DemandKind
    payload: Any
    geer_id: str | None = None
    destination_tier_id: str = ""
    state: DemandState = DemandState.PENDING
    claim: Claim | None = None

    def __post_init__(self):
        expected = PAYLOAD_TYPES[self.kind]
        if not isinstance(self.payload, expected):
            raise TypeError(f"{self.kind.label} demand needs {expected.__name__}, got {type(self.payload).__name__}")

    def copy(self) -> "Demand":
        return Demand(self.signature, self.kind, self.payload, self.geer_id,
                      self.destination_tier_id, self.state, self.claim)


@dataclass
class StoreEntry:
    demand: Demand
    value: Any = None
    forensic: list[str] = field(default_factory=list)
    deposited_at: int = 0
    computed_at: int | None = None

    @property
    def computed(self) -> bool:
        return self.demand.state == DemandState.COMPUTED


@dataclass(frozen=True)
class FetchResult:
    state: DemandState
    value: Any = None


@dataclass(frozen=True)
class WarehouseKey:
    """(geerId, nodeId, full tag vector over the Geer's dimensions)"""
    geer_id: str
    node_id: int
    tags: tuple[int, ...]

    @classmethod
    def for_node(cls, geer_id: str, node_id: int, context: Context, dimensions: Iterable[str]) -> "WarehouseKey":
        return cls(geer_id, node_id, context.restrict(dimensions))

    @classmethod
    def for_demand(cls, signature: DemandSignature) -> "WarehouseKey":
        # procedural results are keyed by the demand signature alone
        return cls(f"demand:{signature.value}", -1, ())


def error_record(kind: str, detail: str) -> dict:
    return {"error": kind, "detail": detail}


def is_error_record(value: Any) -> bool:
    return isinstance(value, dict) and set(value) == {"error", "detail"}
