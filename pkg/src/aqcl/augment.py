"""Random views for the contrastive branch: history masking and embedding-bit masking."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Batch, Sample


@dataclass
class AugmentConfig:
    history_mask_rate: float = 0.2
    embed_drop_rate: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("history_mask_rate", "embed_drop_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _keep_mask(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Independent keep flags for ``n`` items, redrawn until at least one survives."""
    if n == 0:
        return np.zeros(0, bool)
    if rate >= 1.0:
        # redrawing would never terminate; keep one item uniformly
        keep = np.zeros(n, bool)
        keep[rng.integers(n)] = True
        return keep
    while True:
        keep = rng.random(n) >= rate
        if keep.any():
            return keep


def augment_history(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Drop each history item with probability ``history_mask_rate``, keeping at least one."""
    hist = np.asarray(sample.history)
    keep = _keep_mask(len(hist), cfg.history_mask_rate, rng)
    return replace(sample, history=tuple(int(v) for v in hist[keep]))


def augment_batch_history(batch: Batch, cfg: AugmentConfig, rng: np.random.Generator) -> Batch:
    """Batched :func:`augment_history` on the padded history matrix.

    Kept items are compacted to the front so padding stays at the tail.
    """
    hist, mask = batch.history, batch.history_mask
    new_hist = np.zeros_like(hist)
    new_mask = np.zeros_like(mask)
    counts = mask.sum(axis=1)
    for r in range(len(batch)):
        n = int(counts[r])
        if n == 0:
            continue
        kept = hist[r, :n][_keep_mask(n, cfg.history_mask_rate, rng)]
        new_hist[r, : len(kept)] = kept
        new_mask[r, : len(kept)] = True
    return batch.with_history(new_hist, new_mask)


def embed_dropout_mask(shape, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """0/1 mask zeroing each element with probability ``embed_drop_rate``; no rescaling."""
    return (rng.random(shape) >= cfg.embed_drop_rate).astype(np.float64)
