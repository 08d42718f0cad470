from __future__ import annotations

import threading
import time

from .chain import Ledger


class RealTimeTicker:
    """Drives a timed-mode ledger from the wall clock.

    The simulated clock advances with elapsed real time (scaled by
    ``speed``) and a block is sealed whenever one interval has passed since
    the head block.
    """

    def __init__(self, ledger: Ledger, speed: float = 1.0, poll_s: float = 0.05):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.ledger = ledger
        self.speed = speed
        self.poll_s = poll_s
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> "RealTimeTicker":
        base_ms = self.ledger.clock_ms
        t0 = time.monotonic()

        def run() -> None:
            interval = self.ledger.profile.block_interval_ms
            while not self._stop.wait(self.poll_s):
                now = base_ms + int((time.monotonic() - t0) * 1000 * self.speed)
                self.ledger.advance_clock(now)
                if now >= self.ledger.head.timestamp_ms + interval:
                    self.ledger.produce_block(now)

        self._thread = threading.Thread(target=run, name="firmchain-ticker", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
