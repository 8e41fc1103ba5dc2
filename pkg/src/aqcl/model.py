"""Compact CTR backbone: embeddings -> pooled history -> MLP -> sigmoid, plus projector g."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ndcore as nd
from .data import Batch

CHECKPOINT_MAGIC = b"AQCLCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    num_users: int
    num_items: int
    extra_vocab: tuple[int, ...] = ()
    embed_dim: int = 16
    hidden_dims: tuple[int, ...] = (64, 32)
    projector_dims: tuple[int, int] = (64, 64)
    z_dim: int = 32
    pooling: str = "mean"
    product_features: bool = True
    dropout_rate: float = 0.2
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.extra_vocab = tuple(int(v) for v in self.extra_vocab)
        self.hidden_dims = tuple(int(v) for v in self.hidden_dims)
        self.projector_dims = tuple(int(v) for v in self.projector_dims)
        if self.pooling not in ("mean", "attention"):
            raise ValueError(f"pooling must be 'mean' or 'attention', got {self.pooling!r}")
        if len(self.projector_dims) != 2:
            raise ValueError("projector_dims holds the two hidden widths of the 3-layer projector")
        if self.z_dim < 1:
            raise ValueError("z_dim must be >= 1")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout_rate must lie in [0, 1]")
        if self.num_users < 1 or self.num_items < 1 or not self.hidden_dims:
            raise ValueError("num_users, num_items and hidden_dims must be non-empty")

    @property
    def input_dim(self) -> int:
        return self.embed_dim * (3 + 2 * self.product_features + len(self.extra_vocab))

    @property
    def h_dim(self) -> int:
        return self.hidden_dims[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("extra_vocab", "hidden_dims", "projector_dims"):
            d[k] = list(d[k])
        return d


EMBEDDING_KEYS = ("user_emb", "item_emb")


def is_embedding(name: str) -> bool:
    return name in EMBEDDING_KEYS or name.startswith("extra_emb")


def is_auxiliary(name: str) -> bool:
    return name.startswith("proj_")


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Embeddings ~ U(+-1/sqrt(d)); dense weights ~ N(0, 1/fan_in); biases zero."""
    d = cfg.embed_dim
    bound = 1.0 / np.sqrt(d)
    p: dict[str, np.ndarray] = {
        "user_emb": rng.uniform(-bound, bound, (cfg.num_users, d)),
        "item_emb": rng.uniform(-bound, bound, (cfg.num_items, d)),
    }
    for k, n in enumerate(cfg.extra_vocab):
        p[f"extra_emb{k}"] = rng.uniform(-bound, bound, (n, d))
    if cfg.pooling == "attention":
        p["att_w"] = rng.standard_normal((d, d)) / np.sqrt(d)

    def dense(prefix, fan_in, fan_out):
        p[f"{prefix}_w"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        p[f"{prefix}_b"] = np.zeros(fan_out)

    widths = (cfg.input_dim, *cfg.hidden_dims)
    for i in range(len(cfg.hidden_dims)):
        dense(f"mlp{i}", widths[i], widths[i + 1])
    dense("head", cfg.h_dim, 1)
    pw = (cfg.h_dim, *cfg.projector_dims, cfg.z_dim)
    for i in range(3):
        dense(f"proj_{i}", pw[i], pw[i + 1])
    return p


def attention_pool(att_w, history, candidate, mask) -> nd.Tensor:
    """Candidate-conditioned softmax pooling over the history axis.

    ``history`` is ``B x L x d``, ``candidate`` is ``B x d``. Rows with no
    valid history pool to zeros.
    """
    keys = nd.matmul(history, att_w)
    logits = nd.sum(nd.mul(keys, nd.expand_dims(candidate, 1)), axis=-1)
    weights = nd.softmax(logits, axis=-1, mask=np.asarray(mask, dtype=bool))
    return nd.sum(nd.mul(nd.expand_dims(weights, -1), history), axis=1)


def embed(cfg: ModelConfig, params, batch: Batch) -> nd.Tensor:
    """Concatenated embedding-layer output, ``B x input_dim``."""
    _check_bounds(cfg, batch)
    user = nd.gather(params["user_emb"], batch.users)
    cand = nd.gather(params["item_emb"], batch.items)
    hist = nd.gather(params["item_emb"], batch.history)
    if cfg.pooling == "attention":
        pooled = attention_pool(params["att_w"], hist, cand, batch.history_mask)
    else:
        pooled = nd.mean_pool(hist, batch.history_mask)
    parts = [user, cand, pooled]
    if cfg.product_features:
        parts += [nd.mul(pooled, cand), nd.mul(user, cand)]
    for k in range(len(cfg.extra_vocab)):
        parts.append(nd.gather(params[f"extra_emb{k}"], batch.extras[:, k]))
    return nd.concat(parts, axis=1)


def forward(
    cfg: ModelConfig,
    params,
    batch: Batch,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    embed_mask: np.ndarray | None = None,
) -> tuple[nd.Tensor, nd.Tensor]:
    """Return ``(h, y_hat)``: latent codes ``B x h_dim`` and click probabilities ``B``.

    In ``train`` mode inverted dropout is applied after each hidden layer using
    ``rng``. ``embed_mask`` (``B x input_dim``) zeroes embedding bits for an
    augmented view.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if len(batch) == 0:
        raise ValueError("forward: empty batch")
    x = embed(cfg, params, batch)
    if embed_mask is not None:
        x = nd.mul(x, embed_mask)
    p = cfg.dropout_rate
    for i in range(len(cfg.hidden_dims)):
        x = nd.leaky_relu(nd.add(nd.matmul(x, params[f"mlp{i}_w"]), params[f"mlp{i}_b"]), cfg.leaky_slope)
        if mode == "train" and p > 0:
            if rng is None:
                raise ValueError("train mode with dropout needs an rng")
            keep = (rng.random(x.shape) >= p) / (1.0 - p) if p < 1 else np.zeros(x.shape)
            x = nd.mul(x, keep)
    h = x
    logit = nd.add(nd.matmul(h, params["head_w"]), params["head_b"])
    y_hat = nd.sigmoid(nd.reshape(logit, (-1,)))
    return h, y_hat


def project(cfg: ModelConfig, params, h) -> nd.Tensor:
    """Projector g: three dense layers with leaky-ReLU between them."""
    z = h
    for i in range(3):
        z = nd.add(nd.matmul(z, params[f"proj_{i}_w"]), params[f"proj_{i}_b"])
        if i < 2:
            z = nd.leaky_relu(z, cfg.leaky_slope)
    return z


def predict(cfg: ModelConfig, params, batch: Batch) -> np.ndarray:
    """Eval-mode click probabilities as a plain array."""
    return forward(cfg, params, batch, mode="eval")[1].data


def _check_bounds(cfg: ModelConfig, batch: Batch) -> None:
    checks = [("user_id", batch.users, cfg.num_users), ("item_id", batch.items, cfg.num_items)]
    hist = np.where(batch.history_mask, batch.history, 0)
    checks.append(("history", hist, cfg.num_items))
    if cfg.extra_vocab:
        if batch.extras.shape[1] < len(cfg.extra_vocab):
            raise ValueError(
                f"batch carries {batch.extras.shape[1]} extra fields, model expects {len(cfg.extra_vocab)}"
            )
        for k, n in enumerate(cfg.extra_vocab):
            checks.append((f"extra[{k}]", batch.extras[:, k], n))
    for fld, arr, n in checks:
        bad = (arr < 0) | (arr >= n)
        if np.any(bad):
            pos = int(np.argwhere(bad)[0][0])
            raise IndexError(f"sample {pos}: {fld} out of range [0, {n})")


# ------------------------------------------------------------------ checkpoint
# Layout: magic | u32 version | u64 header length | JSON header | raw float64 LE.
# The header lists tensors in sorted-name order with shape and byte offset.


def save_checkpoint(path, cfg: ModelConfig, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(params)
    entries, offset = [], 0
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "meta": meta or {},
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an AQCL checkpoint")
    version, n = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + n])
    base = 20 + n
    params = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        params[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=start).reshape(e["shape"]).copy()
    return ModelConfig(**header["config"]), params, header["meta"]
