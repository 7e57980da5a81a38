from dataclasses import dataclass, field
from enum import Enum, IntEnum


class TxnEvent(IntEnum):
    REQUEST = 1
    BEGIN = 2
    PREPARE = 3
    PRELIMINARY_COMPLETE = 4
    COMMIT = 5
    END = 6
    ABORT = 7


class TxnState(str, Enum):
    REQUESTED = "Requested"
    ACTIVE = "Active"
    PREPARED = "Prepared"
    PRELIMINARILY_COMPLETE = "PreliminarilyComplete"
    COMMITTED = "Committed"
    ENDED = "Ended"
    ABORTED = "Aborted"


ABORTABLE = (TxnState.REQUESTED, TxnState.ACTIVE, TxnState.PREPARED, TxnState.PRELIMINARILY_COMPLETE)

# (current state, event) -> next state; None is "no transaction yet"
TRANSITIONS: dict[tuple[TxnState | None, TxnEvent], TxnState] = {
    (None, TxnEvent.REQUEST): TxnState.REQUESTED,
    (TxnState.REQUESTED, TxnEvent.BEGIN): TxnState.ACTIVE,
    (TxnState.ACTIVE, TxnEvent.PREPARE): TxnState.PREPARED,
    (TxnState.PREPARED, TxnEvent.PRELIMINARY_COMPLETE): TxnState.PRELIMINARILY_COMPLETE,
    (TxnState.PREPARED, TxnEvent.COMMIT): TxnState.COMMITTED,
    (TxnState.PRELIMINARILY_COMPLETE, TxnEvent.COMMIT): TxnState.COMMITTED,
    (TxnState.COMMITTED, TxnEvent.END): TxnState.ENDED,
    **{(state, TxnEvent.ABORT): TxnState.ABORTED for state in ABORTABLE},
}

PAYLOAD_EVENTS = frozenset({TxnEvent.PREPARE, TxnEvent.PRELIMINARY_COMPLETE, TxnEvent.END})

FINISHED = frozenset({TxnState.ENDED, TxnState.ABORTED})

# Checkpoint markers use this reserved id; real ids start at 1
CHECKPOINT_TXN_ID = 0


def next_state(state: TxnState | None, event: TxnEvent) -> TxnState | None:
    return TRANSITIONS.get((state, event))


@dataclass(frozen=True)
class WalEntry:
    txn_id: int
    event: TxnEvent
    operation: str = ""
    payload: bytes | None = None
    checkpoint: bool = False

    def __post_init__(self):
        if self.payload is not None and self.event not in PAYLOAD_EVENTS:
            raise ValueError(f"{self.event.name} entries carry no payload")


@dataclass(frozen=True)
class CommittedTxn:
    txn_id: int
    operation: str
    payload: bytes | None
    ended: bool


@dataclass
class ReplayResult:
    committed: list[CommittedTxn] = field(default_factory=list)
    discarded: list[int] = field(default_factory=list)
    aborted: list[int] = field(default_factory=list)
    corrupt_at: int | None = None
    corrupt_reason: str = ""
    end_position: int = 0


class DumpMode(IntEnum):
    BINARY = 1
    GZIP_BINARY = 2

    @classmethod
    def parse(cls, text: str) -> "DumpMode":
        normalized = text.replace("_", "").replace("-", "").lower()
        for mode in cls:
            if mode.name.replace("_", "").lower() == normalized:
                return mode
        raise ValueError(f"unknown dump mode {text!r}")


@dataclass(frozen=True)
class PersistentImage:
    mode: DumpMode
    data: bytes
    integrity: bytes
