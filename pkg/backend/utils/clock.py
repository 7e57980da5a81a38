"""
Clocks used by the runtime: the system clock for real mode and the
simulated tick clock for the deterministic scheduler.
"""

import threading
import time


class SystemClock:
    """Wall-clock time in milliseconds / microseconds"""

    simulated = False

    def now_millis(self) -> int:
        return time.monotonic_ns() // 1_000_000

    def now_micros(self) -> int:
        return time.monotonic_ns() // 1_000

    def sleep(self, millis: float) -> None:
        time.sleep(millis / 1000.0)


class SimClock:
    """One tick is one simulated millisecond"""

    simulated = True

    def __init__(self, start_tick: int = 0):
        self._tick = start_tick
        self._lock = threading.Lock()

    @property
    def tick(self) -> int:
        return self._tick

    def advance(self, ticks: int = 1) -> int:
        with self._lock:
            self._tick += ticks
            return self._tick

    def now_millis(self) -> int:
        return self._tick

    def now_micros(self) -> int:
        return self._tick * 1000

    def sleep(self, millis: float) -> None:
        # Simulated time only moves when the scheduler ticks
        return None
