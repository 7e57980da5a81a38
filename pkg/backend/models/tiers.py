from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class TierKind(str, Enum):
    GMT = "GMT"
    DST = "DST"
    DGT = "DGT"
    DWT = "DWT"

    @classmethod
    def parse(cls, text: str) -> "TierKind":
        try:
            return cls(text.upper())
        except ValueError:
            raise ValueError(f"unknown tier kind {text!r}")


class TierStatus(str, Enum):
    ALLOCATED = "allocated"
    LIVE = "live"
    FAILED = "failed"
    DEALLOCATED = "deallocated"


class EndpointSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    protocol: str
    address: str


class NodeDescriptor(BaseModel):
    node_id: str = Field(min_length=1)
    endpoints: list[EndpointSpec] = Field(min_length=1)
    capacity: dict[TierKind, int] = Field(default_factory=dict)

    @field_validator("capacity")
    @classmethod
    def capacity_non_negative(cls, value: dict[TierKind, int]) -> dict[TierKind, int]:
        for kind, count in value.items():
            if count < 0:
                raise ValueError(f"capacity for {kind.value} must be >= 0")
        return value

    def capacity_for(self, kind: TierKind) -> int:
        return self.capacity.get(kind, 0)


class TierRef(BaseModel):
    tier_id: str
    kind: TierKind
    node_id: str
    status: TierStatus = TierStatus.ALLOCATED

    def occupies_capacity(self) -> bool:
        return self.status in (TierStatus.ALLOCATED, TierStatus.LIVE)


class TierRegistration(BaseModel):
    """Payload of the system demand a new tier sends to the GMT"""
    node_id: str = Field(min_length=1)
    tier_id: str = Field(min_length=1)
    destination_gmt_tier_id: str = Field(min_length=1)
    kind: TierKind


class AllocationRequest(BaseModel):
    kind: TierKind
    count: int = Field(default=1, ge=1)
    preferred_node_id: str | None = None
    configuration: dict[str, Any] = Field(default_factory=dict)


class DeallocationRequest(BaseModel):
    tier_id: str
    reason: str = "operator request"


class RegistrationResult(BaseModel):
    accepted: bool
    credential: bytes | None = None
    assigned_tier_ids: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def credential_iff_accepted(self) -> "RegistrationResult":
        if self.accepted != (self.credential is not None):
            raise ValueError("a registration result carries a credential iff it is accepted")
        return self
