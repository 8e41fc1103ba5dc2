"""Logloss, instance-level contrastive loss, the auto-quantized contrastive loss and their sum."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass
class LossConfig:
    tau1: float = 0.1
    tau2: float = 0.1
    icl_tau: float = 0.1
    aux_weight: float = 0.05
    top_k: int = 5

    def __post_init__(self):
        if min(self.tau1, self.tau2, self.icl_tau) <= 0:
            raise ValueError("temperatures must be positive")
        if self.aux_weight < 0:
            raise ValueError("aux_weight must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


def logloss(y_hat, labels) -> nd.Tensor:
    """Mean binary cross-entropy with log arguments clamped at 1e-12."""
    y_hat = nd.constant(y_hat)
    y = np.asarray(labels, dtype=np.float64)
    p = y_hat.data
    if p.shape != y.shape:
        raise nd.ShapeError("logloss", p.shape, y.shape)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("logloss: predictions must lie in (0, 1)")
    pos = nd.log(nd.clip(y_hat, LOG_CLAMP, np.inf))
    neg = nd.log(nd.clip(nd.sub(1.0, y_hat), LOG_CLAMP, np.inf))
    per = nd.add(nd.mul(y, pos), nd.mul(1.0 - y, neg))
    return nd.neg(nd.mean(per))


def _pair_logits(z, z_plus, tau: float):
    """Normalized views plus the in-batch candidate logits for every anchor.

    Returns ``(zn, pos, logits, mask)`` where ``logits`` is ``B x 2B``: the first
    ``B`` columns are sims to all augmented views, the last ``B`` to all
    anchors; ``mask`` drops the anchor-to-itself column. ``pos`` is the
    anchor-to-own-view logit.
    """
    z, z_plus = nd.constant(z), nd.constant(z_plus)
    if z.shape != z_plus.shape or z.data.ndim != 2:
        raise nd.ShapeError("contrastive views", z.shape, z_plus.shape)
    B = z.shape[0]
    zn = nd.l2_normalize(z)
    zp = nd.l2_normalize(z_plus)
    to_views = nd.matmul(zn, nd.transpose(zp))
    to_anchors = nd.matmul(zn, nd.transpose(zn))
    logits = nd.mul(nd.concat([to_views, to_anchors], axis=1), 1.0 / tau)
    mask = np.concatenate([np.ones((B, B), bool), ~np.eye(B, dtype=bool)], axis=1)
    pos = nd.mul(nd.dot_rows(zn, zp), 1.0 / tau)
    if B == 1:
        log.warning("contrastive loss on a batch of 1: no negatives, loss is 0")
    return zn, pos, logits, mask


def icl_per_anchor(z, z_plus, tau: float) -> nd.Tensor:
    _, pos, logits, mask = _pair_logits(z, z_plus, tau)
    return nd.sub(nd.logsumexp(logits, axis=1, mask=mask), pos)


def icl_loss(z, z_plus, cfg: LossConfig) -> nd.Tensor:
    """InfoNCE over in-batch negatives (other anchors and their views), cosine sims."""
    return nd.mean(icl_per_anchor(z, z_plus, cfg.icl_tau))


def topk_mask(sims: np.ndarray, k: int) -> np.ndarray:
    """Boolean ``B x T`` mask of each row's ``k`` largest entries, ties to the lower index."""
    B, T = sims.shape
    if k > T:
        raise ValueError(f"top_k={k} exceeds codebook size {T}")
    # stable sort on the negated sims keeps lower indices first among ties
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    mask = np.zeros((B, T), bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def aqcl_terms(z, z_plus, codebook, alphas, cfg: LossConfig) -> tuple[nd.Tensor, nd.Tensor]:
    """Per-anchor ``(log numerator, log denominator)`` of the AQCL ratio."""
    zn, pos, logits, mask = _pair_logits(z, z_plus, cfg.tau1)
    codebook = nd.constant(codebook)
    if codebook.data.ndim != 2 or codebook.shape[1] != zn.shape[1]:
        raise nd.ShapeError("aqcl codebook", codebook.shape, zn.shape)
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1)
    if alphas.shape[0] != zn.shape[0]:
        raise nd.ShapeError("aqcl alphas", alphas.shape, zn.shape)
    qn = nd.l2_normalize(codebook)
    code_sims = nd.matmul(zn, nd.transpose(qn))
    code_logits = nd.mul(code_sims, 1.0 / cfg.tau2)
    top = topk_mask(code_sims.data, cfg.top_k)
    log_cluster = nd.logsumexp(code_logits, axis=1, mask=top)
    log_num = nd.add(nd.mul(1.0 - alphas, pos), nd.mul(alphas, log_cluster))
    all_logits = nd.concat([logits, code_logits], axis=1)
    all_mask = np.concatenate([mask, np.ones(code_logits.shape, bool)], axis=1)
    log_den = nd.logsumexp(all_logits, axis=1, mask=all_mask)
    return log_num, log_den


def aqcl_per_anchor(z, z_plus, codebook, alphas, cfg: LossConfig) -> nd.Tensor:
    log_num, log_den = aqcl_terms(z, z_plus, codebook, alphas, cfg)
    return nd.sub(log_den, log_num)


def aqcl_loss(z, z_plus, codebook, alphas, cfg: LossConfig) -> nd.Tensor:
    """Auto-quantized contrastive loss, averaged over anchors.

    Per anchor ``b`` the numerator is the geometric blend
    ``d1(z, z+)^(1 - a_b) * (sum over top-K codewords d2(z, q))^a_b`` and the
    denominator sums ``d1`` over the positive view and the ``2B - 2`` in-batch
    negatives plus ``d2`` over every codeword, with
    ``d1 = exp(cos / tau1)``, ``d2 = exp(cos / tau2)``.
    Gradients reach ``z``, ``z_plus`` and the codebook.
    """
    return nd.mean(aqcl_per_anchor(z, z_plus, codebook, alphas, cfg))


def total_loss(ctr_loss, aux_loss, cfg: LossConfig) -> nd.Tensor:
    return nd.add(ctr_loss, nd.mul(aux_loss, cfg.aux_weight))
