"""Online interest codebook: balanced Sinkhorn assignment, hard codes, and the codebook loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd


@dataclass
class CodebookConfig:
    capacity: int = 128
    tau3: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("codebook capacity must be >= 2")
        if self.tau3 <= 0:
            raise ValueError("tau3 must be positive")


@dataclass
class SinkhornConfig:
    epsilon: float = 0.05
    n_iters: int = 3

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")


def init_codebook(capacity: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``capacity`` rows drawn uniformly on the unit sphere."""
    q = rng.standard_normal((capacity, dim))
    return renormalize(q)


def renormalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities, rows of ``a`` against rows of ``b``."""
    an = a / (np.linalg.norm(a, axis=1, keepdims=True) + nd.NORM_GUARD)
    bn = b / (np.linalg.norm(b, axis=1, keepdims=True) + nd.NORM_GUARD)
    return an @ bn.T


def sinkhorn_assign(codebook: np.ndarray, z: np.ndarray, cfg: SinkhornConfig) -> np.ndarray:
    """Entropic balanced assignment of ``B`` representations to ``T`` codewords.

    Starts from ``exp(S / eps)`` with ``S[t, b] = cos(q_t, z_b)`` (shifted by
    the column max), then alternates column scaling (each column sums to
    ``1/B``) and row scaling (each row sums to ``1/T``) ``n_iters`` times,
    ending on a row step. Returns the ``T x B`` nonnegative plan.
    """
    z = np.atleast_2d(z)
    if z.shape[0] < 1:
        raise ValueError("sinkhorn_assign needs at least one representation")
    s = cosine(codebook, z) / cfg.epsilon
    m = np.exp(s - s.max(axis=0, keepdims=True))
    T, B = m.shape
    for _ in range(cfg.n_iters):
        m /= m.sum(axis=0, keepdims=True) * B
        m /= m.sum(axis=1, keepdims=True) * T
    return m


def discretize(assign: np.ndarray) -> np.ndarray:
    """One-hot per column at the argmax codeword; ties go to the lowest index."""
    codes = np.zeros_like(assign)
    codes[np.argmax(assign, axis=0), np.arange(assign.shape[1])] = 1.0
    return codes


def codebook_loss(codebook, z, codes: np.ndarray, tau3: float) -> nd.Tensor:
    """Cross-entropy of hard codes against the softmax over codeword similarities.

    ``z`` is detached, so gradients reach the codebook only. ``codes`` is
    ``T x B`` as produced by :func:`discretize`; the loss sums over the batch.
    """
    zs = nd.stop_gradient(z)
    qn = nd.l2_normalize(nd.constant(codebook))
    logits = nd.mul(nd.matmul(nd.l2_normalize(zs), nd.transpose(qn)), 1.0 / tau3)  # B x T
    log_norm = nd.logsumexp(logits, axis=1)
    picked = nd.sum(nd.mul(logits, codes.T), axis=1)
    return nd.sum(nd.sub(nd.mul(log_norm, codes.sum(axis=0)), picked))


def topk_codewords(codebook: np.ndarray, z: np.ndarray, k: int) -> list[int]:
    """Indices of the ``k`` codewords most cosine-similar to ``z``, best first, ties to lower index."""
    T = codebook.shape[0]
    if not 1 <= k <= T:
        raise ValueError(f"k={k} must lie in [1, {T}]")
    sims = cosine(np.atleast_2d(z), codebook)[0]
    return [int(i) for i in np.argsort(-sims, kind="stable")[:k]]


def usage_histogram(codes: np.ndarray) -> np.ndarray:
    return codes.sum(axis=1).astype(np.int64)


def assign_interest(codebook: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Nearest codeword per row of ``z`` (top-1 by cosine)."""
    return np.argmax(cosine(np.atleast_2d(z), codebook), axis=1)
