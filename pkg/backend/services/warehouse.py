"""
Value warehouse: first-write-wins memo of computed values keyed by
(geerId, nodeId, context).
"""

import logging
import threading
from dataclasses import dataclass
from typing import Any, Iterable

from models.demands import WarehouseKey

logger = logging.getLogger(__name__)

CLASSIFICATION_STAGE = "classification"


@dataclass(frozen=True)
class WarehouseEntry:
    value: Any
    committed_at: int
    stage: str | None = None


class Warehouse:
    def __init__(self, clock=None, enabled: bool = True):
        self.clock = clock
        self.enabled = enabled
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._entries: dict[WarehouseKey, WarehouseEntry] = {}

    def lookup(self, key: WarehouseKey) -> Any | None:
        """warehouseLookup: None on a miss (or when memoization is disabled)"""
        entry = self.lookup_entry(key)
        return None if entry is None else entry.value

    def lookup_entry(self, key: WarehouseKey) -> WarehouseEntry | None:
        if not self.enabled:
            return None
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                self.misses += 1
            else:
                self.hits += 1
            return entry

    def commit(self, key: WarehouseKey, value: Any, stage: str | None = None,
               committed_at: int | None = None) -> bool:
        """warehouseCommit: first write wins; returns True if this write was stored"""
        if not self.enabled:
            return False
        if committed_at is None:
            committed_at = self.clock.now_micros() if self.clock is not None else 0
        with self._lock:
            if key in self._entries:
                return False
            self._entries[key] = WarehouseEntry(value, committed_at, stage)
            return True

    def contains(self, key: WarehouseKey) -> bool:
        with self._lock:
            return key in self._entries

    def entries(self, stage: str | None = None) -> dict[WarehouseKey, WarehouseEntry]:
        with self._lock:
            return {k: e for k, e in self._entries.items() if stage is None or e.stage == stage}

    def replace(self, key: WarehouseKey, entry: WarehouseEntry) -> None:
        """Overwrite an entry; only cache synchronization resolves conflicts this way"""
        with self._lock:
            self._entries[key] = entry

    def import_entries(self, entries: Iterable[tuple[WarehouseKey, WarehouseEntry]]) -> int:
        imported = 0
        with self._lock:
            for key, entry in entries:
                if key not in self._entries:
                    self._entries[key] = entry
                    imported += 1
        return imported

    def __len__(self) -> int:
        return len(self._entries)
