"""Grid search over the alpha schedule's (w1, w2), selected by validation Logloss."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig
from .codebook import CodebookConfig, SinkhornConfig
from .data import BUCKETS, Splits
from .losses import LossConfig
from .metrics import Undefined
from .model import ModelConfig
from .schedule import AlphaSchedule
from .trainer import TrainConfig, TrainingDiverged, evaluate, train

log = logging.getLogger(__name__)


class SearchError(ValueError):
    pass


@dataclass
class SearchConfig:
    w1_grid: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    w2_grid: tuple[float, ...] = (0.5, 1.0, 2.0)
    candidates: tuple[tuple[float, float], ...] | None = None  # explicit list overrides the grid
    workers: int = 1

    def __post_init__(self):
        self.w1_grid = tuple(float(v) for v in self.w1_grid)
        self.w2_grid = tuple(float(v) for v in self.w2_grid)
        if self.candidates is not None:
            self.candidates = tuple((float(a), float(b)) for a, b in self.candidates)

    def points(self) -> list[tuple[float, float]]:
        pts = list(self.candidates) if self.candidates is not None else [(a, b) for a in self.w1_grid for b in self.w2_grid]
        if not pts:
            raise SearchError("empty candidate set")
        for a, b in pts:
            if a <= 0 or b <= 0:
                raise SearchError(f"candidate ({a}, {b}): w1 and w2 must be positive")
        return pts


@dataclass
class TrialSpec:
    """Everything one candidate needs; picklable for worker processes."""

    model: ModelConfig
    loss: LossConfig
    codebook: CodebookConfig
    sinkhorn: SinkhornConfig
    augment: AugmentConfig
    train: TrainConfig
    splits: Splits


@dataclass
class SearchResult:
    best: AlphaSchedule
    rows: list[dict]
    timings: dict[str, float] = field(default_factory=dict)
    best_params: dict | None = None

    def report(self) -> dict:
        return {
            "selected": {"w1": self.best.w1, "w2": self.best.w2, "mean_length": self.best.mean_length},
            "selection_metric": "val_logloss",
            "candidates": self.rows,
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), sort_keys=True, indent=2) + "\n"


def _key(w1: float, w2: float) -> str:
    return f"w1={w1:g},w2={w2:g}"


def run_trial(spec: TrialSpec, w1: float, w2: float, train_fn=train) -> tuple[dict, dict | None, float]:
    """Train one candidate; return (report row, params or None, seconds)."""
    t0 = time.perf_counter()
    schedule = AlphaSchedule(w1, w2, spec.splits.mean_length)
    row = {"w1": w1, "w2": w2, "seed": spec.train.seed}
    try:
        res = train_fn(
            spec.model, spec.loss, spec.codebook, spec.sinkhorn, spec.augment, spec.train, spec.splits, schedule
        )
    except TrainingDiverged as exc:
        row.update(status="failed", reason=str(exc))
        return row, None, time.perf_counter() - t0
    rep = evaluate(spec.model, res.params, spec.splits.val, spec.splits.buckets_of(spec.splits.val), spec.train)
    steps = [s["logloss"] for s in res.trace.steps if s["epoch"] == res.best_epoch]
    row.update(
        status="ok",
        best_epoch=res.best_epoch,
        train_logloss=float(np.mean(steps)) if steps else None,
        val_logloss=rep.overall.logloss,
        val_auc=_num(rep.overall.auc),
        val_auc_by_bucket={b: _num(rep.buckets[b].auc) for b in BUCKETS},
    )
    return row, res.params, time.perf_counter() - t0


def _num(v):
    return None if v is None or isinstance(v, Undefined) else float(v)


def _rank(row: dict):
    auc = row["val_auc"] if row["val_auc"] is not None else -np.inf
    return (row["val_logloss"], -auc, row["w1"], row["w2"])


def search(cfg: SearchConfig, spec: TrialSpec, train_fn=train) -> SearchResult:
    """Train one model per (w1, w2) with a shared seed and keep the best on validation.

    Lowest validation Logloss wins; ties go to higher validation AUC, then the
    lexicographically smaller (w1, w2). Diverged candidates are recorded and
    excluded. Wall times are returned separately so the report stays
    byte-stable across reruns.
    """
    points = cfg.points()
    if spec.splits.mean_length <= 0:
        raise SearchError("training split has no history; the schedule's mean length is undefined")
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_trial, spec, a, b, train_fn) for a, b in points]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [run_trial(spec, a, b, train_fn) for a, b in points]

    rows = [o[0] for o in outcomes]
    timings = {_key(r["w1"], r["w2"]): o[2] for r, o in zip(rows, outcomes)}
    ok = [(r, o[1]) for r, o in zip(rows, outcomes) if r["status"] == "ok"]
    for r in rows:
        if r["status"] != "ok":
            log.warning("candidate %s failed: %s", _key(r["w1"], r["w2"]), r["reason"])
    if not ok:
        raise SearchError("every candidate failed to train")
    best_row, best_params = min(ok, key=lambda rp: _rank(rp[0]))
    for r in rows:
        r["selected"] = r is best_row
    best = AlphaSchedule(best_row["w1"], best_row["w2"], spec.splits.mean_length)
    return SearchResult(best, rows, timings, best_params)
