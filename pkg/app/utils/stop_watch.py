import time
from typing import List, Optional

import numpy as np


def _now_ms() -> float:
    return time.perf_counter() * 1000


class Stopwatch:
    """
    Accumulating wall-clock timer in milliseconds.

    Every start/stop span is kept as a lap, so one stopwatch can time a
    whole benchmark and still report per-image latency.
    """

    def __init__(self):
        self.start_time: Optional[float] = None
        self.laps: List[float] = []

    def start(self) -> None:
        if self.start_time is not None:
            raise RuntimeError("Stopwatch is already running")
        self.start_time = _now_ms()

    def stop(self) -> float:
        """Close the running span and return its length"""
        if self.start_time is None:
            raise RuntimeError("Stopwatch is not running")
        lap = _now_ms() - self.start_time
        self.laps.append(lap)
        self.start_time = None
        return lap

    def reset(self) -> None:
        self.start_time = None
        self.laps = []

    def elapsed(self) -> float:
        total = float(sum(self.laps))
        if self.start_time is not None:
            total += _now_ms() - self.start_time
        return total

    def seconds(self) -> float:
        return self.elapsed() / 1000

    def median_lap(self) -> Optional[float]:
        return float(np.median(self.laps)) if self.laps else None

    def __enter__(self) -> "Stopwatch":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
