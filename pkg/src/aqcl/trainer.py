"""Joint training loop: CTR Logloss plus weighted auxiliary loss, with per-batch codebook updates."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .augment import AugmentConfig, augment_batch_history, embed_dropout_mask
from .codebook import (
    CodebookConfig,
    SinkhornConfig,
    codebook_loss,
    discretize,
    init_codebook,
    renormalize,
    sinkhorn_assign,
)
from .data import Dataset, Splits
from .losses import LossConfig, aqcl_loss, icl_loss, logloss, total_loss
from .metrics import MetricsReport, auc, bucket_report, mean_logloss
from .model import ModelConfig, forward, init_params, is_embedding, predict, project
from .schedule import AlphaSchedule

log = logging.getLogger(__name__)

AUX_MODES = ("none", "icl", "aqcl")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, trace: "TrainTrace"):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.trace = trace


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    embed_l2: float = 1e-5
    seed: int = 0
    aux: str = "aqcl"
    alpha_const: float | None = None
    max_history: int = 50
    eval_batch_size: int = 4096

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.aux not in AUX_MODES:
            raise ValueError(f"aux must be one of {AUX_MODES}, got {self.aux!r}")
        if self.alpha_const is not None and not 0.0 <= self.alpha_const <= 1.0:
            raise ValueError("alpha_const must lie in [0, 1]")


@dataclass
class TrainTrace:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        rows = [{"type": "step", **s} for s in self.steps] + [{"type": "epoch", **e} for e in self.epochs]
        rows.sort(key=lambda r: (r.get("epoch", 0), r["type"] == "epoch", r.get("step", 0)))
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    codebook: np.ndarray
    trace: TrainTrace
    best_epoch: int
    best_val_logloss: float
    wall_time: float


class Adam:
    """Adam with bias correction over a dict of dense arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators so switching the auxiliary path never perturbs the others."""
    names = ("init", "shuffle", "dropout", "augment", "codebook")
    kids = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(k) for n, k in zip(names, kids)}


def batch_alphas(lengths: np.ndarray, schedule: AlphaSchedule | None, cfg: TrainConfig) -> np.ndarray:
    if cfg.alpha_const is not None:
        return np.full(len(lengths), float(cfg.alpha_const))
    if schedule is None:
        raise ValueError("aqcl training needs an alpha schedule or alpha_const")
    return np.asarray(schedule(lengths), dtype=np.float64)


def train_step(
    model_cfg: ModelConfig,
    params: dict[str, np.ndarray],
    codebook: np.ndarray,
    batch,
    loss_cfg: LossConfig,
    aug_cfg: AugmentConfig,
    train_cfg: TrainConfig,
    schedule: AlphaSchedule | None,
    rngs: dict[str, np.random.Generator],
) -> tuple[dict[str, float], dict[str, np.ndarray], np.ndarray | None]:
    """One forward/backward pass. Returns (loss values, gradients, detached z)."""
    tape = nd.Tape()
    with tape:
        p = {k: tape.watch(v, k) for k, v in params.items()}
        h, y_hat = forward(model_cfg, p, batch, mode="train", rng=rngs["dropout"])
        ctr = logloss(y_hat, batch.labels)
        values = {"logloss": float(ctr.data)}
        z_data = None
        if train_cfg.aux == "none":
            loss = ctr
        else:
            view = augment_batch_history(batch, aug_cfg, rngs["augment"])
            emask = embed_dropout_mask((len(batch), model_cfg.input_dim), aug_cfg, rngs["augment"])
            h_plus, _ = forward(model_cfg, p, view, mode="train", rng=rngs["augment"], embed_mask=emask)
            z = project(model_cfg, p, h)
            z_plus = project(model_cfg, p, h_plus)
            z_data = z.data
            if train_cfg.aux == "icl":
                aux = icl_loss(z, z_plus, loss_cfg)
            else:
                q = tape.watch(codebook, "codebook")
                alphas = batch_alphas(batch.lengths, schedule, train_cfg)
                values["alpha_mean"] = float(alphas.mean())
                aux = aqcl_loss(z, z_plus, q, alphas, loss_cfg)
            values["aux"] = float(aux.data)
            loss = total_loss(ctr, aux, loss_cfg)
    grads = tape.backward(loss)
    values["total"] = float(loss.data)
    if train_cfg.embed_l2 > 0:
        reg = 0.0
        for k in params:
            if is_embedding(k):
                grads[k] = grads[k] + 2.0 * train_cfg.embed_l2 * params[k]
                reg += train_cfg.embed_l2 * float(np.sum(params[k] ** 2))
        values["embed_l2"] = reg
    return values, grads, z_data


def codebook_step(
    codebook: np.ndarray,
    z: np.ndarray,
    aux_grad: np.ndarray | None,
    cb_cfg: CodebookConfig,
    sk_cfg: SinkhornConfig,
    opt: Adam,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Sinkhorn codes on the pre-update ``z``, then one optimizer step on the codebook.

    The step uses the codebook-loss gradient plus ``aux_grad`` (the weighted
    auxiliary loss's pull on the codewords), then re-projects rows to the
    unit sphere. Returns (new codebook, hard codes, codebook loss).
    """
    codes = discretize(sinkhorn_assign(codebook, z, sk_cfg))
    tape = nd.Tape()
    with tape:
        q = tape.watch(codebook, "codebook")
        loss = codebook_loss(q, z, codes, cb_cfg.tau3)
    g = tape.backward(loss)["codebook"]
    if aux_grad is not None:
        g = g + aux_grad
    state = {"codebook": codebook.copy()}
    opt.step(state, {"codebook": g})
    return renormalize(state["codebook"]), codes, float(loss.data)


def train(
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    cb_cfg: CodebookConfig,
    sk_cfg: SinkhornConfig,
    aug_cfg: AugmentConfig,
    train_cfg: TrainConfig,
    splits: Splits,
    schedule: AlphaSchedule | None = None,
) -> TrainResult:
    """Run the joint training loop with early stopping on validation Logloss.

    Each step: forward anchor and augmented views, project, build the loss
    with per-sample alpha, update the model; then assign the pre-update
    representations to codewords with Sinkhorn and update the codebook. The
    last incomplete training batch is dropped. Parameters from the best
    validation epoch are restored at the end.
    """
    t0 = time.perf_counter()
    rngs = rng_streams(train_cfg.seed)
    params = init_params(model_cfg, rngs["init"])
    codebook = init_codebook(cb_cfg.capacity, model_cfg.z_dim, rngs["codebook"])
    if loss_cfg.top_k > cb_cfg.capacity:
        raise ValueError(f"top_k={loss_cfg.top_k} exceeds codebook capacity {cb_cfg.capacity}")
    opt = Adam(train_cfg.lr)
    cb_opt = Adam(train_cfg.lr)
    update_codebook = train_cfg.aux == "aqcl" and cb_cfg.enabled

    train_ds = splits.train
    B = train_cfg.batch_size
    n_batches = len(train_ds) // B
    if n_batches == 0:
        raise ValueError(f"training split has {len(train_ds)} rows, fewer than one batch of {B}")

    trace = TrainTrace()
    best = (np.inf, -1, None, None)
    step = 0
    bad_epochs = 0
    for epoch in range(train_cfg.max_epochs):
        order = rngs["shuffle"].permutation(len(train_ds))
        usage = np.zeros(cb_cfg.capacity, np.int64)
        for k in range(n_batches):
            batch = train_ds.batch(order[k * B : (k + 1) * B], train_cfg.max_history)
            values, grads, z = train_step(
                model_cfg, params, codebook, batch, loss_cfg, aug_cfg, train_cfg, schedule, rngs
            )
            aux_grad = grads.pop("codebook", None)
            if not all(np.isfinite(v) for v in values.values()):
                trace.steps.append({"step": step, "epoch": epoch, **_finite(values)})
                raise TrainingDiverged(step, trace)
            opt.step(params, grads)
            if update_codebook:
                codebook, codes, cb_loss = codebook_step(codebook, z, aux_grad, cb_cfg, sk_cfg, cb_opt)
                usage += codes.sum(axis=1).astype(np.int64)
                values["codebook"] = cb_loss
            trace.steps.append({"step": step, "epoch": epoch, **values})
            step += 1

        val_pred = predict_dataset(model_cfg, params, splits.val, train_cfg)
        val_ll = mean_logloss(val_pred, splits.val.labels)
        val_auc = auc(val_pred, splits.val.labels)
        rec = {"epoch": epoch, "val_logloss": val_ll, "val_auc": val_auc if isinstance(val_auc, float) else None}
        if update_codebook:
            rec["usage"] = usage.tolist()
        trace.epochs.append(rec)
        log.info("epoch %d val_logloss=%.5f val_auc=%s", epoch, val_ll, val_auc)
        if not np.isfinite(val_ll):
            raise TrainingDiverged(step, trace)
        if val_ll < best[0]:
            best = (val_ll, epoch, {k: v.copy() for k, v in params.items()}, codebook.copy())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_cfg.patience:
                break

    best_ll, best_epoch, best_params, best_codebook = best
    return TrainResult(best_params, best_codebook, trace, best_epoch, best_ll, time.perf_counter() - t0)


def _finite(values: dict) -> dict:
    return {k: (v if np.isfinite(v) else repr(v)) for k, v in values.items()}


def predict_dataset(model_cfg: ModelConfig, params, ds: Dataset, train_cfg: TrainConfig | None = None) -> np.ndarray:
    cfg = train_cfg or TrainConfig()
    out = np.empty(len(ds))
    for s in range(0, len(ds), cfg.eval_batch_size):
        idx = np.arange(s, min(s + cfg.eval_batch_size, len(ds)))
        out[idx] = predict(model_cfg, params, ds.batch(idx, cfg.max_history))
    return out


def latent_dataset(model_cfg: ModelConfig, params, ds: Dataset, train_cfg: TrainConfig | None = None):
    """Eval-mode ``(h, z)`` for every row of ``ds``."""
    cfg = train_cfg or TrainConfig()
    hs, zs = [], []
    for s in range(0, len(ds), cfg.eval_batch_size):
        idx = np.arange(s, min(s + cfg.eval_batch_size, len(ds)))
        h, _ = forward(model_cfg, params, ds.batch(idx, cfg.max_history), mode="eval")
        hs.append(h.data)
        zs.append(project(model_cfg, params, h).data)
    return np.concatenate(hs), np.concatenate(zs)


def evaluate(
    model_cfg: ModelConfig,
    params,
    ds: Dataset,
    buckets: np.ndarray,
    train_cfg: TrainConfig | None = None,
    base: MetricsReport | None = None,
    base_name: str | None = None,
) -> MetricsReport:
    """Eval-mode predictions on ``ds`` summarized overall and per activity bucket.

    Only the embedding, interaction and prediction parameters are read; the
    projector and codebook may be absent.
    """
    pred = predict_dataset(model_cfg, params, ds, train_cfg)
    return bucket_report(pred, ds.labels, buckets, base, base_name)
