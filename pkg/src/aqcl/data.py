"""Interaction records, the planted-interest generator, CSV ingestion, splits and activity buckets.

File format (shared by the generator and :func:`ingest`)::

    user_id,item_id,timestamp,label,history[,extra columns...]
    u17,i204,1033,1,i5|i88|i12

``history`` is a pipe-separated list of previously clicked item ids, most
recent last; an empty field is a user with no history.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

BUCKETS = ("non_active", "slightly_active", "highly_active")
BASE_COLUMNS = ("user_id", "item_id", "timestamp", "label", "history")


class DataError(ValueError):
    """Bad configuration or unreadable dataset."""


class IngestError(DataError):
    def __init__(self, message: str, report: list[str]):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Sample:
    user_id: int
    item_id: int
    history: tuple[int, ...]
    label: int
    extras: tuple[int, ...] = ()
    timestamp: float = 0.0

    @property
    def length(self) -> int:
        return len(self.history)


@dataclass
class Batch:
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray
    history: np.ndarray  # B x Lmax, padded with 0
    history_mask: np.ndarray  # B x Lmax bool
    lengths: np.ndarray  # untruncated history length L_j
    extras: np.ndarray  # B x n_extra

    def __len__(self) -> int:
        return len(self.users)

    def with_history(self, history: np.ndarray, mask: np.ndarray) -> "Batch":
        return Batch(self.users, self.items, self.labels, history, mask, self.lengths, self.extras)


class Dataset:
    """Columnar interaction log ordered by timestamp.

    Histories are stored CSR-style: the history of row ``j`` is
    ``hist_items[hist_ptr[j]:hist_ptr[j + 1]]``.
    """

    def __init__(
        self,
        users,
        items,
        labels,
        timestamps,
        hist_ptr,
        hist_items,
        extras=None,
        num_users: int | None = None,
        num_items: int | None = None,
        extra_vocab: tuple[int, ...] = (),
        user_names: list[str] | None = None,
        item_names: list[str] | None = None,
        extra_names: list[str] | None = None,
        extra_values: list[list[str]] | None = None,
    ):
        self.users = np.asarray(users, dtype=np.int64)
        self.items = np.asarray(items, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.timestamps = np.asarray(timestamps, dtype=np.float64)
        self.hist_ptr = np.asarray(hist_ptr, dtype=np.int64)
        self.hist_items = np.asarray(hist_items, dtype=np.int64)
        n = len(self.users)
        self.extras = np.zeros((n, 0), np.int64) if extras is None else np.asarray(extras, np.int64).reshape(n, -1)
        self.num_users = int(num_users if num_users is not None else (self.users.max() + 1 if n else 0))
        self.num_items = int(
            num_items
            if num_items is not None
            else max(self.items.max(initial=-1), self.hist_items.max(initial=-1)) + 1
        )
        self.extra_vocab = tuple(int(v) for v in extra_vocab) or tuple(
            int(self.extras[:, k].max(initial=-1)) + 1 for k in range(self.extras.shape[1])
        )
        self.user_names = user_names or [f"u{k}" for k in range(self.num_users)]
        self.item_names = item_names or [f"i{k}" for k in range(self.num_items)]
        self.extra_names = extra_names or [f"x{k}" for k in range(self.extras.shape[1])]
        self.extra_values = extra_values or [[str(v) for v in range(n)] for n in self.extra_vocab]
        if len(self.hist_ptr) != n + 1:
            raise DataError("hist_ptr must have one entry per row plus one")
        if np.any(np.diff(self.timestamps) < 0):
            raise DataError("rows must be ordered by timestamp")
        self.lengths = np.diff(self.hist_ptr)

    def __len__(self) -> int:
        return len(self.users)

    def history(self, j: int) -> np.ndarray:
        return self.hist_items[self.hist_ptr[j] : self.hist_ptr[j + 1]]

    def sample(self, j: int) -> Sample:
        return Sample(
            int(self.users[j]),
            int(self.items[j]),
            tuple(int(v) for v in self.history(j)),
            int(self.labels[j]),
            tuple(int(v) for v in self.extras[j]),
            float(self.timestamps[j]),
        )

    def samples(self) -> list[Sample]:
        return [self.sample(j) for j in range(len(self))]

    @classmethod
    def from_samples(cls, samples: list[Sample], **kw) -> "Dataset":
        samples = sorted(samples, key=lambda s: s.timestamp)
        ptr = np.zeros(len(samples) + 1, np.int64)
        ptr[1:] = np.cumsum([len(s.history) for s in samples])
        hist = [i for s in samples for i in s.history]
        n_extra = len(samples[0].extras) if samples else 0
        return cls(
            [s.user_id for s in samples],
            [s.item_id for s in samples],
            [s.label for s in samples],
            [s.timestamp for s in samples],
            ptr,
            hist,
            np.array([s.extras for s in samples], np.int64).reshape(len(samples), n_extra),
            **kw,
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        lens = self.lengths[idx]
        ptr = np.zeros(len(idx) + 1, np.int64)
        ptr[1:] = np.cumsum(lens)
        hist = (
            np.concatenate([self.history(j) for j in idx]) if len(idx) and ptr[-1] else np.zeros(0, np.int64)
        )
        return Dataset(
            self.users[idx],
            self.items[idx],
            self.labels[idx],
            self.timestamps[idx],
            ptr,
            hist,
            self.extras[idx],
            num_users=self.num_users,
            num_items=self.num_items,
            extra_vocab=self.extra_vocab,
            user_names=self.user_names,
            item_names=self.item_names,
            extra_names=self.extra_names,
            extra_values=self.extra_values,
        )

    def batch(self, idx, max_history: int = 50) -> Batch:
        """Collate rows ``idx``; histories keep their most recent ``max_history`` items."""
        idx = np.asarray(idx, dtype=np.int64)
        lens = self.lengths[idx]
        width = max(1, int(min(lens.max(initial=0), max_history)))
        hist = np.zeros((len(idx), width), np.int64)
        mask = np.zeros((len(idx), width), bool)
        for r, j in enumerate(idx):
            h = self.history(j)[-max_history:]
            hist[r, : len(h)] = h
            mask[r, : len(h)] = True
        return Batch(
            self.users[idx],
            self.items[idx],
            self.labels[idx].astype(np.float64),
            hist,
            mask,
            lens.astype(np.float64),
            self.extras[idx],
        )

    # ---------------------------------------------------------------- file IO

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*BASE_COLUMNS, *self.extra_names])
        for j in range(len(self)):
            w.writerow(
                [
                    self.user_names[self.users[j]],
                    self.item_names[self.items[j]],
                    _fmt_ts(self.timestamps[j]),
                    int(self.labels[j]),
                    "|".join(self.item_names[i] for i in self.history(j)),
                    *(self.extra_values[k][v] for k, v in enumerate(self.extras[j])),
                ]
            )
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())


def _fmt_ts(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


# ------------------------------------------------------------------ generator


@dataclass
class GeneratorConfig:
    n_users: int = 10_000
    n_items: int = 2_000
    n_interests: int = 8
    mixture: tuple[float, float, float] = (0.6, 0.3, 0.1)
    length_ranges: tuple[tuple[int, int], ...] = ((0, 2), (3, 10), (11, 50))
    impressions: tuple[int, int] = (4, 8)
    second_interest_prob: float = 0.5
    match_prob: float = 0.4
    p_hi: float = 0.8
    p_lo: float = 0.1
    noise: float = 0.0
    n_extra_values: int = 4
    timeline: int = 100_000
    split_fractions: tuple[float, float] = (0.8, 0.9)
    seed: int = 0

    def __post_init__(self):
        self.mixture = tuple(float(v) for v in self.mixture)
        self.length_ranges = tuple((int(a), int(b)) for a, b in self.length_ranges)
        self.impressions = tuple(int(v) for v in self.impressions)
        self.split_fractions = tuple(float(v) for v in self.split_fractions)

    def validate(self) -> None:
        if len(self.mixture) != 3 or abs(sum(self.mixture) - 1.0) > 1e-9 or min(self.mixture) < 0:
            raise DataError(f"activity mixture must be 3 non-negative fractions summing to 1, got {self.mixture}")
        if self.n_interests < 2:
            raise DataError("n_interests must be >= 2")
        if len(self.length_ranges) != 3 or any(a < 0 or b < a for a, b in self.length_ranges):
            raise DataError(f"bad history length ranges {self.length_ranges}")
        if self.n_items < self.n_interests:
            raise DataError("need at least one item per interest")
        per_interest = self.n_items // self.n_interests
        if max(b for _, b in self.length_ranges) > per_interest:
            raise DataError(
                f"history length {max(b for _, b in self.length_ranges)} exceeds the {per_interest} "
                "distinct items available per interest"
            )
        lo, hi = self.impressions
        if lo < 1 or hi < lo:
            raise DataError(f"bad impression range {self.impressions}")
        if self.n_users * hi > self.timeline:
            raise DataError("timeline too short for the requested impressions")
        for p in (self.p_hi, self.p_lo, self.noise, self.match_prob, self.second_interest_prob):
            if not 0.0 <= p <= 1.0:
                raise DataError("probabilities must lie in [0, 1]")
        a, b = self.split_fractions
        if not 0 < a < b < 1:
            raise DataError("split_fractions must satisfy 0 < train < val < 1")

    def expected_click_rate(self) -> float:
        """Label base rate implied by the click model."""
        k = self.n_interests
        m = 1.0 + self.second_interest_prob  # expected interests per user
        q = self.match_prob + (1.0 - self.match_prob) * m / k
        r = q * self.p_hi + (1.0 - q) * self.p_lo
        return r * (1.0 - self.noise) + (1.0 - r) * self.noise


@dataclass
class Generated:
    dataset: Dataset
    boundaries: tuple[float, float]
    user_interests: list[tuple[int, ...]]
    item_interest: np.ndarray
    user_group: np.ndarray

    def meta(self) -> dict:
        return {
            "boundaries": list(self.boundaries),
            "num_users": self.dataset.num_users,
            "num_items": self.dataset.num_items,
            "user_group": self.user_group.tolist(),
            "item_interest": self.item_interest.tolist(),
            "user_interests": [list(v) for v in self.user_interests],
        }


def generate(cfg: GeneratorConfig) -> Generated:
    """Planted-interest click log with a skewed activity mixture.

    Each user holds one or two latent interests and each item exactly one.
    A user's pre-window history (length drawn from its activity group's range)
    consists of earlier clicks on its own interests; within the window every
    impression is clicked with ``p_hi`` on an interest match and ``p_lo``
    otherwise, labels flipped with probability ``noise``. Clicks append to the
    history seen by later impressions.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    K = cfg.n_interests
    item_interest = np.arange(cfg.n_items) % K
    rng.shuffle(item_interest)
    by_interest = [np.flatnonzero(item_interest == k) for k in range(K)]

    counts = np.floor(np.array(cfg.mixture) * cfg.n_users).astype(int)
    counts[np.argmax(cfg.mixture)] += cfg.n_users - counts.sum()
    group = np.repeat(np.arange(3), counts)
    rng.shuffle(group)

    lo_imp, hi_imp = cfg.impressions
    n_imp = rng.integers(lo_imp, hi_imp + 1, size=cfg.n_users)
    slots = rng.permutation(cfg.timeline)[: n_imp.sum()]
    slot_ptr = np.concatenate([[0], np.cumsum(n_imp)])

    rows = []
    interests: list[tuple[int, ...]] = []
    for u in range(cfg.n_users):
        ints = [int(rng.integers(K))]
        if rng.random() < cfg.second_interest_prob:
            other = int(rng.integers(K - 1))
            ints.append(other + (other >= ints[0]))
        interests.append(tuple(ints))
        lo, hi = cfg.length_ranges[group[u]]
        n_pre = int(rng.integers(lo, hi + 1))
        pool = np.concatenate([by_interest[k] for k in ints])
        history = [int(i) for i in rng.choice(pool, size=n_pre, replace=False)] if n_pre else []
        times = np.sort(slots[slot_ptr[u] : slot_ptr[u + 1]])
        for t in times:
            # already-clicked items are not shown again
            while True:
                if rng.random() < cfg.match_prob:
                    item = int(rng.choice(pool))
                else:
                    item = int(rng.integers(cfg.n_items))
                if item not in history:
                    break
            p = cfg.p_hi if item_interest[item] in ints else cfg.p_lo
            y = int(rng.random() < p)
            if rng.random() < cfg.noise:
                y = 1 - y
            extra = int(rng.integers(cfg.n_extra_values)) if cfg.n_extra_values else None
            rows.append((int(t), u, item, y, tuple(history), extra))
            if y:
                history.append(item)

    rows.sort(key=lambda r: r[0])
    ptr = np.zeros(len(rows) + 1, np.int64)
    ptr[1:] = np.cumsum([len(r[4]) for r in rows])
    extras = None
    extra_vocab: tuple[int, ...] = ()
    if cfg.n_extra_values:
        extras = np.array([[r[5]] for r in rows], np.int64)
        extra_vocab = (cfg.n_extra_values,)
    ds = Dataset(
        [r[1] for r in rows],
        [r[2] for r in rows],
        [r[3] for r in rows],
        [r[0] for r in rows],
        ptr,
        [i for r in rows for i in r[4]],
        extras,
        num_users=cfg.n_users,
        num_items=cfg.n_items,
        extra_vocab=extra_vocab,
        extra_names=["device"] if cfg.n_extra_values else None,
    )
    ts = ds.timestamps
    a, b = cfg.split_fractions
    boundaries = (float(ts[int(a * len(ts))]), float(ts[int(b * len(ts))]))
    return Generated(ds, boundaries, interests, item_interest, group)


# ------------------------------------------------------------------- ingest


@dataclass
class IngestConfig:
    delimiter: str = ","
    max_malformed_fraction: float = 0.01


def ingest(path, cfg: IngestConfig | None = None) -> tuple[Dataset, list[str]]:
    """Read a delimited interaction log, remapping raw ids to dense indices.

    Returns the dataset and the list of rejected-row messages. Raises
    :class:`IngestError` when more than ``max_malformed_fraction`` of the rows
    are malformed.
    """
    cfg = cfg or IngestConfig()
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=cfg.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(header[:5]) != BASE_COLUMNS:
            raise DataError(f"{path}: header must start with {','.join(BASE_COLUMNS)}")
        extra_names = header[5:]
        parsed, malformed = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                parsed.append((lineno, *_parse_row(row, len(header))))
            except ValueError as exc:
                malformed.append(f"line {lineno}: {exc}")
    total = len(parsed) + len(malformed)
    if total and len(malformed) / total > cfg.max_malformed_fraction:
        raise IngestError(f"{path}: {len(malformed)} of {total} rows malformed", malformed)

    # earliest click time of each (user, item) pair, for chronology checks
    first_click: dict[tuple[str, str], float] = {}
    for _, u, i, t, y, _, _ in parsed:
        if y == 1 and t < first_click.get((u, i), np.inf):
            first_click[(u, i)] = t
    report = list(malformed)
    kept = []
    for rec in parsed:
        lineno, u, i, t, y, hist, extras = rec
        late = [h for h in hist if first_click.get((u, h), -np.inf) >= t]
        if late:
            report.append(f"line {lineno}: history item(s) {','.join(late)} clicked at or after the row timestamp")
            continue
        kept.append(rec)
    kept.sort(key=lambda r: (r[3], r[0]))

    users: dict[str, int] = {}
    items: dict[str, int] = {}
    extra_maps: list[dict[str, int]] = [{} for _ in extra_names]
    samples = []
    for _, u, i, t, y, hist, extras in kept:
        uid = users.setdefault(u, len(users))
        iid = items.setdefault(i, len(items))
        h = tuple(items.setdefault(x, len(items)) for x in hist)
        ex = tuple(m.setdefault(v, len(m)) for m, v in zip(extra_maps, extras))
        samples.append(Sample(uid, iid, h, y, ex, t))
    ds = Dataset.from_samples(
        samples,
        num_users=len(users),
        num_items=len(items),
        extra_vocab=tuple(len(m) for m in extra_maps),
        user_names=list(users),
        item_names=list(items),
        extra_names=extra_names,
        extra_values=[list(m) for m in extra_maps],
    )
    for msg in report:
        log.warning("ingest %s", msg)
    return ds, report


def _parse_row(row: list[str], width: int):
    if len(row) != width:
        raise ValueError(f"expected {width} fields, got {len(row)}")
    u, i, ts, label, hist = (c.strip() for c in row[:5])
    if not u or not i:
        raise ValueError("empty user_id or item_id")
    t = float(ts)
    if not np.isfinite(t):
        raise ValueError(f"bad timestamp {ts!r}")
    if label not in ("0", "1"):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    history = tuple(h for h in hist.split("|")) if hist else ()
    if any(not h for h in history):
        raise ValueError("empty item id inside history")
    return u, i, t, int(label), history, tuple(c.strip() for c in row[5:])


# ------------------------------------------------------- splits and buckets


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    user_bucket: np.ndarray  # per user, index into BUCKETS
    user_length: np.ndarray  # training-split history length per user
    mean_length: float  # mean training-split history length over training rows

    def buckets_of(self, ds: Dataset) -> np.ndarray:
        return self.user_bucket[ds.users]


def split_and_bucket(
    ds: Dataset,
    boundaries: tuple[float, float],
    length_thresholds: tuple[int, int] | None = None,
) -> Splits:
    """Chronological train/val/test split plus per-user activity buckets.

    Rows with ``t < boundaries[0]`` train, ``t < boundaries[1]`` validate, the
    rest test. A user's activity length is the history length of their last
    training row (0 if none). By default users are ranked by that length (ties
    by user index) and cut at the 60th and 90th percentile positions, except
    that zero-length users are always non-active. ``length_thresholds=(a, b)``
    overrides this with fixed cutoffs: ``L <= a`` non-active, ``L <= b``
    slightly active.
    """
    t_val, t_test = boundaries
    if t_val > t_test:
        raise DataError(f"boundaries out of order: {boundaries}")
    ts = ds.timestamps
    tr = np.flatnonzero(ts < t_val)
    va = np.flatnonzero((ts >= t_val) & (ts < t_test))
    te = np.flatnonzero(ts >= t_test)
    for name, idx in (("train", tr), ("val", va), ("test", te)):
        if len(idx) == 0:
            raise DataError(f"{name} split is empty for boundaries {boundaries}")

    length = np.zeros(ds.num_users, np.int64)
    # rows are time-ordered, so the last write per user wins
    length[ds.users[tr]] = ds.lengths[tr]
    n = ds.num_users
    bucket = np.zeros(n, np.int64)
    if length_thresholds is not None:
        a, b = length_thresholds
        bucket[length > a] = 1
        bucket[length > b] = 2
    else:
        order = np.lexsort((np.arange(n), length))
        rank = np.empty(n, np.int64)
        rank[order] = np.arange(n)
        bucket[rank >= int(round(0.6 * n))] = 1
        bucket[rank >= int(round(0.9 * n))] = 2
        bucket[length == 0] = 0
    mean_len = float(ds.lengths[tr].mean()) if len(tr) else 0.0
    return Splits(ds.subset(tr), ds.subset(va), ds.subset(te), bucket, length, mean_len)
