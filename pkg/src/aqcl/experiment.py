"""Planted-interest experiment: AQCL versus the Logloss-only baseline over several seeds."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import AugmentConfig
from .codebook import CodebookConfig, SinkhornConfig
from .data import BUCKETS, GeneratorConfig, generate, split_and_bucket
from .losses import LossConfig
from .model import ModelConfig
from .schedule import AlphaSchedule
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger(__name__)


def _gen() -> GeneratorConfig:
    # 25 items per interest leaves room for the longest histories
    return GeneratorConfig(n_items=200, length_ranges=((0, 2), (3, 10), (11, 25)))


def _train() -> TrainConfig:
    return TrainConfig(lr=0.01, max_epochs=8, patience=3, embed_l2=1e-4)


@dataclass
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    gen: GeneratorConfig = field(default_factory=_gen)
    train: TrainConfig = field(default_factory=_train)
    loss: LossConfig = field(default_factory=lambda: LossConfig(aux_weight=0.01))
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    w1: float = 1.0
    w2: float = 1.0
    alpha_const: float | None = None
    embed_dim: int = 16
    hidden_dims: tuple[int, ...] = (64, 32)


def _usage_ratio(usage: list[int] | None) -> float | None:
    if not usage:
        return None
    lo = min(usage)
    return float("inf") if lo == 0 else max(usage) / lo


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """Baseline and AQCL trained on one generated world; test AUCs and the codeword balance."""
    gen = GeneratorConfig(**{**asdict(cfg.gen), "seed": seed})
    g = generate(gen)
    splits = split_and_bucket(g.dataset, g.boundaries)
    ds = g.dataset
    mc = ModelConfig(
        num_users=ds.num_users,
        num_items=ds.num_items,
        extra_vocab=ds.extra_vocab,
        embed_dim=cfg.embed_dim,
        hidden_dims=cfg.hidden_dims,
    )
    schedule = AlphaSchedule(cfg.w1, cfg.w2, splits.mean_length)
    row: dict = {"seed": seed}
    for arm in ("baseline", "aqcl"):
        tc = TrainConfig(
            **{
                **asdict(cfg.train),
                "seed": seed,
                "aux": "none" if arm == "baseline" else "aqcl",
                "alpha_const": cfg.alpha_const if arm == "aqcl" else None,
            }
        )
        t0 = time.perf_counter()
        res = train(mc, cfg.loss, cfg.codebook, cfg.sinkhorn, cfg.augment, tc, splits, schedule)
        rep = evaluate(mc, res.params, splits.test, splits.buckets_of(splits.test), tc)
        row[arm] = {
            "auc": rep.overall.auc,
            **{b: rep.buckets[b].auc for b in BUCKETS},
            "best_epoch": res.best_epoch,
            "seconds": time.perf_counter() - t0,
        }
        if arm == "aqcl":
            row[arm]["usage_ratio"] = _usage_ratio(res.trace.epochs[-1].get("usage"))
        log.info("seed %d %s auc=%.4f", seed, arm, rep.overall.auc)
    row["delta"] = {k: row["aqcl"][k] - row["baseline"][k] for k in ("auc", *BUCKETS)}
    return row


def run(cfg: ExperimentConfig | None = None) -> dict:
    """All seeds plus median AUC deltas and the worst final-epoch usage ratio."""
    cfg = cfg or ExperimentConfig()
    t0 = time.perf_counter()
    rows = [run_seed(cfg, s) for s in cfg.seeds]
    ratios = [r["aqcl"]["usage_ratio"] for r in rows if r["aqcl"]["usage_ratio"] is not None]
    return {
        "rows": rows,
        "median_delta": {k: float(np.median([r["delta"][k] for r in rows])) for k in rows[0]["delta"]},
        "max_usage_ratio": max(ratios) if ratios else None,
        "seconds": time.perf_counter() - t0,
    }


def summary_table(result: dict) -> str:
    lines = ["seed\tbase_auc\taqcl_auc\tdelta\tdelta_non_active\tusage_ratio"]
    for r in result["rows"]:
        lines.append(
            f"{r['seed']}\t{r['baseline']['auc']:.4f}\t{r['aqcl']['auc']:.4f}\t{r['delta']['auc']:+.4f}"
            f"\t{r['delta']['non_active']:+.4f}\t{r['aqcl']['usage_ratio']:.2f}"
        )
    m = result["median_delta"]
    lines.append(f"median\t\t\t{m['auc']:+.4f}\t{m['non_active']:+.4f}\t{result['max_usage_ratio']:.2f}")
    return "\n".join(lines) + "\n"


def to_json(result: dict) -> str:
    return json.dumps(result, sort_keys=True, indent=2) + "\n"
