"""
Recoverable classification service.

Single owner of the training set and the classification results of one
generator tier. Every update runs as a write-ahead-logged transaction
(request, begin, prepare with the result, preliminary complete, commit,
end); the in-memory state only changes once the commit is durable, so a
replacement tier can rebuild it by replaying the log.
"""

import logging
from typing import Any

from models.pipeline import ResultSet, TrainingSet
from models.recovery import DumpMode, PersistentImage
from services.storage_service import HASH_BYTES, dump_state, restore_state
from services.wal_service import WriteAheadLogger, replay_log
from utils.canonical import decode_value, encode_value
from utils.errors import IllegalTransition, LogWriteFailure, RecoveryError

logger = logging.getLogger(__name__)

TRAIN_OPERATION = "train"
CLASSIFY_OPERATION = "classify"


class RecoverableClassificationService:
    def __init__(self, wal: WriteAheadLogger, forensics=None):
        self.wal = wal
        self.forensics = forensics
        self.training_set = TrainingSet()
        self.results: dict[str, ResultSet] = {}

    # -- transactional updates

    def record_training(self, training_set: TrainingSet) -> TrainingSet:
        self._transact(TRAIN_OPERATION, {"training_set": training_set.to_value()})
        return self.training_set

    def record_result(self, label: str, result: ResultSet) -> ResultSet:
        self._transact(CLASSIFY_OPERATION, {"label": label, "result": result.to_value()})
        return self.results[label]

    def _transact(self, operation: str, record: dict) -> int:
        payload = encode_value(record)
        txn_id = self.wal.request_transaction(operation)
        try:
            self.wal.begin_transaction(txn_id)
            self.wal.prepare_transaction(txn_id, payload)
            self.wal.preliminary_complete_transaction(txn_id)
            self.wal.commit_transaction(txn_id)
        except LogWriteFailure:
            try:
                self.wal.abort_transaction(txn_id)
            except (LogWriteFailure, IllegalTransition) as e:
                logger.warning(f"Could not log abort of txn {txn_id}: {e}")
            raise
        self._apply(operation, record)
        try:
            self.wal.end_transaction(txn_id)
        except LogWriteFailure as e:
            # the commit is durable; replay applies it whether or not END made it
            logger.warning(f"END of committed txn {txn_id} was not logged: {e}")
        if self.forensics is not None:
            self.forensics.emit("txn_committed", txn_id=txn_id, operation=operation)
        return txn_id

    def _apply(self, operation: str, record: Any) -> None:
        if operation == TRAIN_OPERATION:
            self.training_set = TrainingSet.from_value(record["training_set"])
        elif operation == CLASSIFY_OPERATION:
            self.results[record["label"]] = ResultSet.from_value(record["result"])
        else:
            raise RecoveryError(f"unknown classification operation '{operation}'")

    # -- recovery

    def recover_from(self, log: bytes, base_hash: bytes | None = None) -> int:
        """Apply every committed transaction of the log; returns how many were applied"""
        replay = replay_log(log, base_hash)
        for txn in replay.committed:
            self._apply(txn.operation, decode_value(txn.payload))
        logger.info(f"Replayed {len(replay.committed)} classification transactions "
                    f"({len(replay.discarded)} discarded, {len(replay.aborted)} aborted)")
        return len(replay.committed)

    def to_value(self) -> dict:
        return {
            "training_set": self.training_set.to_value(),
            "results": {label: result.to_value() for label, result in self.results.items()},
        }

    def load_value(self, value: dict) -> None:
        self.training_set = TrainingSet.from_value(value["training_set"])
        self.results = {label: ResultSet.from_value(result) for label, result in value["results"].items()}

    def checkpoint(self, mode: DumpMode = DumpMode.GZIP_BINARY) -> PersistentImage:
        """Dump the state and mark the log position it materializes"""
        image = dump_state(self, mode)
        self.wal.checkpoint(image.integrity)
        return image

    def restore(self, image: PersistentImage | bytes, log: bytes | None = None) -> int:
        """Load a base image, then replay the log tail written after its checkpoint"""
        self.load_value(restore_state(image))
        if log is None:
            return 0
        integrity = image.integrity if isinstance(image, PersistentImage) else bytes(image)[-HASH_BYTES:]
        return self.recover_from(log, integrity)
