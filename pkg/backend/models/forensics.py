from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class ForensicEvent:
    """One analysis-ready event: what happened, where, when and how long it took"""
    name: str
    emitter: str
    occurred_at: int
    seq: int = 0
    duration_micros: int | None = None
    tier_id: str | None = None
    node_id: str | None = None
    properties: dict[str, Any] = field(default_factory=dict)
    context: dict[str, int] | None = None

    @property
    def order_key(self) -> tuple:
        return (self.occurred_at, self.emitter, self.seq)

    def get(self, key: str, default=None):
        return self.properties.get(key, default)
