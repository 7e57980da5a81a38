import pytest

from models.recovery import TxnEvent, TxnState
from services.wal_service import (
    WAL_MAGIC,
    FailingWalSink,
    FileWalSink,
    MemoryWalSink,
    WriteAheadLogger,
    read_entries,
    replay_log,
    scan_log,
)
from utils.errors import CorruptLog, IllegalTransition, IntegrityFailure, LogWriteFailure, TxnIdOverflow


def _commit(wal, operation, payload):
    txn = wal.request_transaction(operation)
    wal.begin_transaction(txn)
    wal.prepare_transaction(txn, payload)
    wal.preliminary_complete_transaction(txn)
    wal.commit_transaction(txn)
    return txn


def _five_transaction_log():
    """t1 committed+ended, t2 committed, t3 aborted, t4 committed+ended, t5 left prepared"""
    wal = WriteAheadLogger(MemoryWalSink())
    t1 = _commit(wal, "train", b"one")
    wal.end_transaction(t1)
    _commit(wal, "classify", b"two")
    t3 = wal.request_transaction("classify")
    wal.begin_transaction(t3)
    wal.abort_transaction(t3)
    t4 = _commit(wal, "train", b"four")
    wal.end_transaction(t4)
    t5 = wal.request_transaction("classify")
    wal.begin_transaction(t5)
    wal.prepare_transaction(t5, b"five")
    return wal.sink.getvalue()


def test_full_lifecycle_states():
    wal = WriteAheadLogger(MemoryWalSink())
    txn = wal.request_transaction("train")
    assert wal.state(txn) == TxnState.REQUESTED
    assert wal.begin_transaction(txn) == TxnState.ACTIVE
    assert wal.prepare_transaction(txn, b"x") == TxnState.PREPARED
    assert wal.preliminary_complete_transaction(txn) == TxnState.PRELIMINARILY_COMPLETE
    assert wal.commit_transaction(txn) == TxnState.COMMITTED
    assert wal.end_transaction(txn) == TxnState.ENDED


def test_commit_may_skip_preliminary_completion():
    wal = WriteAheadLogger(MemoryWalSink())
    txn = wal.request_transaction("train")
    wal.begin_transaction(txn)
    wal.prepare_transaction(txn, b"x")
    assert wal.commit_transaction(txn) == TxnState.COMMITTED


@pytest.mark.parametrize("steps, illegal", [
    ([], TxnEvent.COMMIT),
    ([TxnEvent.BEGIN], TxnEvent.COMMIT),
    ([TxnEvent.BEGIN, TxnEvent.PREPARE, TxnEvent.COMMIT], TxnEvent.ABORT),
    ([TxnEvent.ABORT], TxnEvent.BEGIN),
])
def test_illegal_transitions_are_rejected(steps, illegal):
    wal = WriteAheadLogger(MemoryWalSink())
    txn = wal.request_transaction("op")
    for event in steps:
        wal.lifecycle(txn, event, payload=b"p" if event == TxnEvent.PREPARE else None)
    before = wal.sink.size()
    with pytest.raises(IllegalTransition):
        wal.lifecycle(txn, illegal)
    assert wal.sink.size() == before


def test_unknown_transaction_is_illegal():
    wal = WriteAheadLogger(MemoryWalSink())
    with pytest.raises(IllegalTransition):
        wal.begin_transaction(42)


def test_ids_increase():
    wal = WriteAheadLogger(MemoryWalSink())
    ids = [wal.request_transaction("op") for _ in range(4)]
    assert ids == [1, 2, 3, 4]


def test_failed_append_leaves_state_unchanged():
    wal = WriteAheadLogger(FailingWalSink(fail_after=2))
    txn = wal.request_transaction("op")
    wal.begin_transaction(txn)
    with pytest.raises(LogWriteFailure):
        wal.prepare_transaction(txn, b"x")
    assert wal.state(txn) == TxnState.ACTIVE


def test_failed_sync_takes_the_entry_back_out_of_the_log():
    sink = FailingWalSink(fail_after=4, fail_on="sync")
    wal = WriteAheadLogger(sink)
    txn = wal.request_transaction("train")
    wal.begin_transaction(txn)
    wal.prepare_transaction(txn, b"x")
    wal.preliminary_complete_transaction(txn)
    with pytest.raises(LogWriteFailure):
        wal.commit_transaction(txn)
    assert wal.state(txn) == TxnState.PRELIMINARILY_COMPLETE

    entries, corrupt_at, _ = scan_log(sink.getvalue())
    assert corrupt_at is None
    assert [entry.event for _, entry in entries] == [
        TxnEvent.REQUEST, TxnEvent.BEGIN, TxnEvent.PREPARE, TxnEvent.PRELIMINARY_COMPLETE,
    ]
    assert replay_log(sink.getvalue()).committed == []


def test_failed_request_does_not_consume_an_id():
    wal = WriteAheadLogger(FailingWalSink(fail_after=0))
    with pytest.raises(LogWriteFailure):
        wal.request_transaction("op")
    wal.sink.fail_after = 10
    assert wal.request_transaction("op") == 1


def test_ids_wrap_after_checkpoint():
    wal = WriteAheadLogger(MemoryWalSink(), max_txn_id=2)
    first = _commit(wal, "op", b"a")
    wal.end_transaction(first)
    second = wal.request_transaction("op")
    wal.abort_transaction(second)
    wal.checkpoint(b"h" * 32)
    assert wal.request_transaction("op") == 1


def test_wraparound_onto_a_live_transaction_overflows():
    wal = WriteAheadLogger(MemoryWalSink(), max_txn_id=2)
    wal.request_transaction("op")
    wal.request_transaction("op")
    with pytest.raises(TxnIdOverflow):
        wal.request_transaction("op")


def test_replay_returns_committed_only_in_commit_order():
    result = replay_log(_five_transaction_log())
    assert [(t.txn_id, t.payload, t.ended) for t in result.committed] == [
        (1, b"one", True), (2, b"two", False), (4, b"four", True)]
    assert result.aborted == [3]
    assert result.discarded == [5]
    assert result.corrupt_at is None


def test_crash_point_sweep_matches_committed_only_oracle():
    data = _five_transaction_log()
    entries, _, _ = scan_log(data)
    ends = [position for position, _ in entries[1:]] + [len(data)]
    commits = [(end, entry.txn_id) for (_, entry), end in zip(entries, ends) if entry.event == TxnEvent.COMMIT]
    for cut in range(len(WAL_MAGIC), len(data) + 1):
        prefix = data[:cut]
        expected = [txn_id for end, txn_id in commits if end <= cut]
        first = replay_log(prefix)
        assert [t.txn_id for t in first.committed] == expected, cut
        # replay is a pure function of the bytes: doing it again changes nothing
        assert replay_log(prefix) == first


def test_applying_a_replay_twice_is_idempotent():
    result = replay_log(_five_transaction_log())
    state = {}
    for _ in range(2):
        for txn in result.committed:
            state[txn.txn_id] = txn.payload
    assert state == {1: b"one", 2: b"two", 4: b"four"}


def test_corrupt_entry_stops_replay_but_keeps_earlier_commits():
    data = bytearray(_five_transaction_log())
    entries, _, _ = scan_log(bytes(data))
    third_txn_position = next(p for p, e in entries if e.txn_id == 3)
    data[third_txn_position + 6] ^= 0xFF
    result = replay_log(bytes(data))
    assert result.corrupt_at == third_txn_position
    assert [t.txn_id for t in result.committed] == [1, 2]
    with pytest.raises(CorruptLog):
        read_entries(bytes(data))


def test_replay_from_checkpoint_skips_materialized_commits():
    wal = WriteAheadLogger(MemoryWalSink())
    wal.end_transaction(_commit(wal, "op", b"before"))
    wal.checkpoint(b"\x01" * 32)
    _commit(wal, "op", b"after")
    result = replay_log(wal.sink.getvalue(), base_hash=b"\x01" * 32)
    assert [t.payload for t in result.committed] == [b"after"]
    with pytest.raises(IntegrityFailure):
        replay_log(wal.sink.getvalue(), base_hash=b"\x02" * 32)


def test_file_sink_survives_reopen(tmp_path):
    path = str(tmp_path / "wal" / "T3.wal")
    sink = FileWalSink(path)
    wal = WriteAheadLogger(sink)
    _commit(wal, "train", b"payload")
    sink.close()
    reopened = FileWalSink(path)
    try:
        data = reopened.getvalue()
        assert data.startswith(WAL_MAGIC)
        assert [t.payload for t in replay_log(data).committed] == [b"payload"]
    finally:
        reopened.close()


def test_observer_sees_log_before_apply():
    wal = WriteAheadLogger(MemoryWalSink())
    seen = []
    wal.observe(lambda phase, txn, event: seen.append((phase, event)))
    wal.request_transaction("op")
    assert seen == [("logged", TxnEvent.REQUEST), ("applied", TxnEvent.REQUEST)]
