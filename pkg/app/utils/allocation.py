"""
Byte accounting for large intermediate buffers
"""
from dataclasses import dataclass, field
from typing import Dict

import numpy as np


@dataclass
class AllocationTracker:
    """Tracks live named buffers and the high-water mark of their total size"""

    live: Dict[str, int] = field(default_factory=dict)
    current: int = 0
    peak: int = 0

    def allocate(self, name: str, array: np.ndarray) -> np.ndarray:
        self.free(name)
        size = int(np.asarray(array).nbytes)
        self.live[name] = size
        self.current += size
        self.peak = max(self.peak, self.current)
        return array

    def free(self, name: str) -> None:
        self.current -= self.live.pop(name, 0)

    def reset(self) -> None:
        self.live.clear()
        self.current = 0
        self.peak = 0
