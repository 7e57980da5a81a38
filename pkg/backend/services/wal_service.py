"""
Write-ahead logger for recoverable services.

Every transaction event is appended (and synced) before the in-memory
transaction state changes. The log file starts with the EDWAL1 magic and
holds length-prefixed entries:

    u64 txn id | u8 event | text operation | blob payload | u8 checkpoint | u32 CRC32

Payload blobs are empty when an entry has no payload.
"""

import logging
import os
import threading
import zlib
from typing import Callable

from models.recovery import (
    CHECKPOINT_TXN_ID,
    FINISHED,
    CommittedTxn,
    ReplayResult,
    TxnEvent,
    TxnState,
    WalEntry,
    next_state,
)
from utils.canonical import CanonicalDecodeError, CanonicalReader, CanonicalWriter
from utils.errors import CorruptLog, IllegalTransition, IntegrityFailure, LogWriteFailure, TxnIdOverflow

logger = logging.getLogger(__name__)

WAL_MAGIC = b"EDWAL1"
MAX_TXN_ID = 2 ** 64 - 1


# -------------------------------------------------------------------- codec

def encode_entry(entry: WalEntry) -> bytes:
    body = (CanonicalWriter()
            .u64(entry.txn_id)
            .u8(int(entry.event))
            .text(entry.operation)
            .blob(entry.payload or b"")
            .u8(1 if entry.checkpoint else 0)
            .getvalue())
    crc = zlib.crc32(body) & 0xFFFFFFFF
    framed = body + crc.to_bytes(4, "big")
    return len(framed).to_bytes(4, "big") + framed


def _decode_entry(framed: bytes) -> WalEntry:
    body, crc = framed[:-4], int.from_bytes(framed[-4:], "big")
    if len(framed) < 4 or zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CanonicalDecodeError(0, "checksum mismatch")
    reader = CanonicalReader(body)
    txn_id = reader.u64()
    try:
        event = TxnEvent(reader.u8())
    except ValueError:
        raise CanonicalDecodeError(8, "unknown event")
    operation = reader.text()
    payload = reader.blob() or None
    flag = reader.u8()
    reader.expect_end()
    if flag not in (0, 1):
        raise CanonicalDecodeError(reader.position, "invalid checkpoint flag")
    try:
        return WalEntry(txn_id, event, operation, payload, flag == 1)
    except ValueError as e:
        raise CanonicalDecodeError(0, str(e))


def scan_log(data: bytes) -> tuple[list[tuple[int, WalEntry]], int | None, str]:
    """
    Decode entries up to the first invalid one.
    Returns ([(position, entry)], corrupt position or None, reason).
    """
    if len(data) < len(WAL_MAGIC) or data[:len(WAL_MAGIC)] != WAL_MAGIC:
        return [], 0, "missing log magic"
    entries = []
    position = len(WAL_MAGIC)
    while position < len(data):
        if position + 4 > len(data):
            return entries, position, "truncated entry length"
        length = int.from_bytes(data[position:position + 4], "big")
        end = position + 4 + length
        if end > len(data):
            return entries, position, "truncated entry"
        try:
            entry = _decode_entry(data[position + 4:end])
        except CanonicalDecodeError as e:
            return entries, position, e.reason
        entries.append((position, entry))
        position = end
    return entries, None, ""


def read_entries(data: bytes) -> list[WalEntry]:
    """Strict read-back: every byte must decode"""
    entries, corrupt_at, reason = scan_log(data)
    if corrupt_at is not None:
        raise CorruptLog(corrupt_at, reason)
    return [entry for _, entry in entries]


# -------------------------------------------------------------------- sinks

class MemoryWalSink:
    """In-memory log with the same ordering contract as the file sink"""

    def __init__(self, initial: bytes = WAL_MAGIC):
        self._buffer = bytearray(initial)

    def append(self, data: bytes) -> None:
        self._buffer.extend(data)

    def sync(self) -> None:
        pass

    def size(self) -> int:
        return len(self._buffer)

    def truncate(self, position: int) -> None:
        del self._buffer[position:]

    def getvalue(self) -> bytes:
        return bytes(self._buffer)


class FileWalSink:
    """Durable log file; every append is fsynced before it is acknowledged"""

    def __init__(self, path: str):
        self.path = path
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        self._file = open(path, "ab")
        if fresh:
            self._file.write(WAL_MAGIC)
            self.sync()

    def append(self, data: bytes) -> None:
        start = self._file.tell()
        try:
            self._file.write(data)
            self._file.flush()
        except OSError:
            # never leave half an entry behind
            self._file.truncate(start)
            raise

    def sync(self) -> None:
        self._file.flush()
        os.fsync(self._file.fileno())

    def truncate(self, position: int) -> None:
        self._file.truncate(position)
        self.sync()

    def size(self) -> int:
        return os.path.getsize(self.path)

    def getvalue(self) -> bytes:
        self._file.flush()
        with open(self.path, "rb") as f:
            return f.read()

    def close(self) -> None:
        self._file.close()


class FailingWalSink(MemoryWalSink):
    """
    Fails every write after the first `fail_after` (fault tests). With
    fail_on="sync" the bytes land and the flush that follows them fails.
    """

    def __init__(self, fail_after: int, fail_on: str = "append"):
        super().__init__()
        self.fail_after = fail_after
        self.fail_on = fail_on
        self.appends = 0

    def append(self, data: bytes) -> None:
        if self.fail_on == "append" and self.appends >= self.fail_after:
            raise OSError("injected write failure")
        self.appends += 1
        super().append(data)

    def sync(self) -> None:
        if self.fail_on == "sync" and self.appends > self.fail_after:
            raise OSError("injected sync failure")


# ------------------------------------------------------------------- logger

class WriteAheadLogger:
    def __init__(self, sink, clock=None, max_txn_id: int = MAX_TXN_ID):
        self.sink = sink
        self.clock = clock
        self.max_txn_id = max_txn_id
        self._lock = threading.RLock()
        self._states: dict[int, TxnState] = {}
        self._next_id = 1
        self._checkpoint = len(WAL_MAGIC)
        self._observers: list[Callable[[str, int, TxnEvent], None]] = []

    def observe(self, observer: Callable[[str, int, TxnEvent], None]) -> None:
        """Instrumentation hook: called with ("logged", id, event) and ("applied", id, event)"""
        self._observers.append(observer)

    def _notify(self, phase: str, txn_id: int, event: TxnEvent) -> None:
        for observer in self._observers:
            observer(phase, txn_id, event)

    def state(self, txn_id: int) -> TxnState | None:
        with self._lock:
            return self._states.get(txn_id)

    @property
    def checkpoint_position(self) -> int:
        return self._checkpoint

    def append(self, entry: WalEntry) -> int:
        """walAppend: returns the byte position of the entry"""
        with self._lock:
            position = self.sink.size()
            try:
                self.sink.append(encode_entry(entry))
                self.sink.sync()
            except OSError as e:
                logger.error(f"WAL append failed for txn {entry.txn_id}: {e}")
                # an entry that was not synced is not logged
                self._discard_from(position)
                raise LogWriteFailure(f"could not append {entry.event.name} for txn {entry.txn_id}: {e}")
            return position

    def _discard_from(self, position: int) -> None:
        if self.sink.size() <= position:
            return
        try:
            self.sink.truncate(position)
        except OSError as e:
            logger.error(f"WAL could not drop the unsynced tail at {position}: {e}")

    def checkpoint(self, image_hash: bytes = b"") -> int:
        """walCheckpoint: marks the position materialized by the image with this hash"""
        with self._lock:
            entry = WalEntry(CHECKPOINT_TXN_ID, TxnEvent.END, "checkpoint", image_hash or None, checkpoint=True)
            position = self.append(entry)
            self._checkpoint = max(self._checkpoint, position)
            # finished transactions are materialized in the image; their ids may be reused
            for txn_id in [t for t, s in self._states.items() if s in FINISHED]:
                del self._states[txn_id]
            return self._checkpoint

    def _allocate_id(self) -> int:
        candidate = self._next_id
        if candidate > self.max_txn_id:
            candidate = 1
        if candidate in self._states:
            raise TxnIdOverflow(f"transaction id {candidate} is still live after wraparound")
        self._next_id = candidate + 1
        return candidate

    def lifecycle(self, txn_id: int | None, event: TxnEvent, operation: str = "",
                  payload: bytes | None = None) -> tuple[int, TxnState]:
        """txnLifecycle: log first, then advance the state"""
        with self._lock:
            previous_next = self._next_id
            if event == TxnEvent.REQUEST:
                if txn_id is not None:
                    raise IllegalTransition(self._states.get(txn_id), event.name)
                current = None
                txn_id = self._allocate_id()
            else:
                if txn_id is None or txn_id not in self._states:
                    raise IllegalTransition(None, event.name)
                current = self._states[txn_id]
            target = next_state(current, event)
            if target is None:
                raise IllegalTransition(current.value if current else None, event.name)
            try:
                self.append(WalEntry(txn_id, event, operation, payload))
            except LogWriteFailure:
                self._next_id = previous_next
                raise
            self._notify("logged", txn_id, event)
            self._states[txn_id] = target
            self._notify("applied", txn_id, event)
            return txn_id, target

    # The seven delegate operations

    def request_transaction(self, operation: str) -> int:
        return self.lifecycle(None, TxnEvent.REQUEST, operation)[0]

    def begin_transaction(self, txn_id: int) -> TxnState:
        return self.lifecycle(txn_id, TxnEvent.BEGIN)[1]

    def prepare_transaction(self, txn_id: int, payload: bytes) -> TxnState:
        return self.lifecycle(txn_id, TxnEvent.PREPARE, payload=payload)[1]

    def preliminary_complete_transaction(self, txn_id: int, payload: bytes | None = None) -> TxnState:
        return self.lifecycle(txn_id, TxnEvent.PRELIMINARY_COMPLETE, payload=payload)[1]

    def commit_transaction(self, txn_id: int) -> TxnState:
        return self.lifecycle(txn_id, TxnEvent.COMMIT)[1]

    def end_transaction(self, txn_id: int, payload: bytes | None = None) -> TxnState:
        return self.lifecycle(txn_id, TxnEvent.END, payload=payload)[1]

    def abort_transaction(self, txn_id: int) -> TxnState:
        return self.lifecycle(txn_id, TxnEvent.ABORT)[1]


# ------------------------------------------------------------------- replay

def replay_log(data: bytes, base_hash: bytes | None = None) -> ReplayResult:
    """
    walReplay: committed transactions in commit order, each exactly once.

    With `base_hash`, only commits after the checkpoint carrying that hash
    are returned (earlier ones are already in the base image). A corrupt
    entry stops the scan; everything before it still counts.
    """
    entries, corrupt_at, reason = scan_log(data)
    start = 0
    if base_hash is not None:
        markers = [p for p, e in entries if e.checkpoint and e.payload == base_hash]
        if not markers:
            raise IntegrityFailure("base image does not match any checkpoint in the log")
        start = markers[-1]

    result = ReplayResult(corrupt_at=corrupt_at, corrupt_reason=reason)
    states: dict[int, TxnState] = {}
    operations: dict[int, str] = {}
    payloads: dict[int, bytes | None] = {}
    committed_at: dict[int, int] = {}
    for position, entry in entries:
        if entry.checkpoint:
            # ids of finished transactions may be reused after a checkpoint
            for txn_id in [t for t, s in states.items() if s in FINISHED]:
                del states[txn_id]
            continue
        current = states.get(entry.txn_id)
        target = next_state(current, entry.event)
        if target is None:
            result.corrupt_at = position
            result.corrupt_reason = f"illegal {entry.event.name} in state {current}"
            break
        states[entry.txn_id] = target
        if entry.event == TxnEvent.REQUEST:
            operations[entry.txn_id] = entry.operation
            payloads[entry.txn_id] = None
        if entry.payload is not None:
            payloads[entry.txn_id] = entry.payload
        if entry.event == TxnEvent.COMMIT and position > start:
            committed_at[entry.txn_id] = len(result.committed)
            result.committed.append(CommittedTxn(entry.txn_id, operations[entry.txn_id],
                                                 payloads[entry.txn_id], ended=False))
        elif entry.event == TxnEvent.END and entry.txn_id in committed_at:
            index = committed_at.pop(entry.txn_id)
            done = result.committed[index]
            result.committed[index] = CommittedTxn(done.txn_id, done.operation, done.payload, ended=True)
        elif entry.event == TxnEvent.ABORT:
            result.aborted.append(entry.txn_id)
        result.end_position = position
    result.discarded = [t for t, s in states.items()
                        if s not in (TxnState.COMMITTED, TxnState.ENDED, TxnState.ABORTED)]
    if result.corrupt_at is not None:
        logger.warning(f"WAL replay stopped at byte {result.corrupt_at}: {result.corrupt_reason}")
    return result
