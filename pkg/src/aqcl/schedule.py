"""History-length-dependent blend weight between instance and cluster attraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AlphaSchedule:
    """``alpha(L) = exp(-w1 * (L / mean_length) ** w2)``."""

    w1: float = 1.0
    w2: float = 1.0
    mean_length: float = 1.0

    def __post_init__(self):
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValueError(f"w1 and w2 must be positive, got ({self.w1}, {self.w2})")
        if self.mean_length <= 0:
            raise ValueError("mean_length must be positive")

    def __call__(self, length):
        return alpha(self, length)


def alpha(schedule: AlphaSchedule, length):
    L = np.asarray(length, dtype=np.float64)
    if np.any(L < 0):
        raise ValueError("history length must be >= 0")
    out = np.exp(-schedule.w1 * np.power(L / schedule.mean_length, schedule.w2))
    # keep the value strictly positive where exp underflows
    out = np.maximum(out, np.finfo(np.float64).tiny)
    return float(out) if out.ndim == 0 else out
