from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from models.forensics import ForensicEvent


@dataclass(frozen=True)
class Credential:
    """Per-node proof of identity; `mac` is never logged"""
    node_id: str
    issued_at: int
    mac: bytes

    def __repr__(self) -> str:
        return f"Credential(node_id={self.node_id!r}, issued_at={self.issued_at})"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None
    node_id: str | None = None

    @classmethod
    def accept(cls, node_id: str) -> "Verdict":
        return cls(True, None, node_id)

    @classmethod
    def reject(cls, reason: str) -> "Verdict":
        return cls(False, reason)


class PolicyScope(str, Enum):
    AS = "AS"  # whole instance, runs on the GMT
    AE = "AE"  # one per node


@dataclass
class ConditionView:
    """What a fluent condition may look at: the current event and recent history"""
    event: ForensicEvent | None
    now: int
    history: "Any"

    def count_recent(self, name: str, window_micros: int) -> int:
        return self.history.count_since(name, self.now - window_micros)


Condition = Callable[[ConditionView], bool]


@dataclass(frozen=True)
class Fluent:
    name: str
    entry: Condition
    exit: Condition
    # Per-subject instances (for example one per failed tier); None means a single instance
    key: Callable[[ForensicEvent], str] | None = None


@dataclass
class FluentState:
    active: bool = False
    active_since: int | None = None
    trigger: ForensicEvent | None = None


@dataclass(frozen=True)
class PolicyMapping:
    fluent_name: str
    actions: tuple[str, ...]
    scope: PolicyScope


@dataclass(frozen=True)
class PolicyAction:
    action_id: str
    fluent_name: str
    key: str | None
    trigger: ForensicEvent | None
    scope: PolicyScope


@dataclass
class HealingReport:
    failed_tier_id: str
    reverted: list[str] = field(default_factory=list)
    replacement_tier_id: str | None = None
    replayed_transactions: int = 0
    degraded: bool = False
    detail: str = ""
