"""AUC, RelaImpr and per-activity-bucket reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .data import BUCKETS

LOG_CLAMP = 1e-12


class Undefined(str):
    """A metric that could not be computed; the string is the reason."""


def auc_exact(scores, labels) -> Fraction | Undefined:
    """Mann-Whitney AUC as an exact rational: ties count one half.

    ``(sum of positive mid-ranks - P(P+1)/2) / (P * N)``; mid-ranks are
    multiples of 1/2, so doubling keeps everything integral.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return Undefined("single class: AUC needs at least one positive and one negative")
    twice_ranks = np.rint(2 * rankdata(s, method="average")).astype(np.int64)
    u2 = int(twice_ranks[y].sum()) - n_pos * (n_pos + 1)
    return Fraction(u2, 2 * n_pos * n_neg)


def auc(scores, labels) -> float | Undefined:
    r = auc_exact(scores, labels)
    return r if isinstance(r, Undefined) else float(r)


def rela_impr(target_auc: float, base_auc: float) -> float | Undefined:
    """Relative AUC lift over a base, in percent, measured from the 0.5 chance level."""
    if isinstance(target_auc, Undefined) or isinstance(base_auc, Undefined):
        return Undefined("AUC undefined")
    if base_auc <= 0.5:
        return Undefined(f"base AUC {base_auc} <= 0.5")
    return ((target_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0


def mean_logloss(pred, labels) -> float:
    p = np.clip(np.asarray(pred, dtype=np.float64), LOG_CLAMP, 1 - LOG_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class GroupMetrics:
    count: int
    auc: float | Undefined | None
    logloss: float | None
    rela_impr: float | Undefined | None = None

    def to_dict(self) -> dict:
        d = {"count": self.count}
        for k in ("auc", "logloss", "rela_impr"):
            v = getattr(self, k)
            if isinstance(v, Undefined):
                d[k] = None
                d[f"{k}_reason"] = str(v)
            else:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GroupMetrics":
        def get(k):
            return Undefined(d[f"{k}_reason"]) if d.get(f"{k}_reason") else d.get(k)

        return cls(d["count"], get("auc"), d.get("logloss"), get("rela_impr"))


@dataclass
class MetricsReport:
    overall: GroupMetrics
    buckets: dict[str, GroupMetrics]
    base_name: str | None = None
    extra: dict = field(default_factory=dict)

    def groups(self) -> dict[str, GroupMetrics]:
        return {"overall": self.overall, **self.buckets}

    def to_dict(self) -> dict:
        d = {name: g.to_dict() for name, g in self.groups().items()}
        d["base"] = self.base_name
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            GroupMetrics.from_dict(d["overall"]),
            {b: GroupMetrics.from_dict(d[b]) for b in BUCKETS},
            d.get("base"),
            d.get("extra", {}),
        )

    def table(self) -> str:
        """Flat tab-separated rows for plotting tools."""
        lines = ["group\tcount\tauc\tlogloss\trela_impr"]
        for name, g in self.groups().items():
            cells = [g.auc, g.logloss, g.rela_impr]
            lines.append(
                "\t".join([name, str(g.count)] + ["" if c is None or isinstance(c, Undefined) else f"{c:.6f}" for c in cells])
            )
        return "\n".join(lines) + "\n"


def bucket_report(pred, labels, buckets, base: MetricsReport | None = None, base_name: str | None = None) -> MetricsReport:
    """AUC and Logloss overall and per activity bucket, with RelaImpr against ``base``."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    buckets = np.asarray(buckets)

    def group(mask) -> GroupMetrics:
        n = int(mask.sum())
        if n == 0:
            return GroupMetrics(0, Undefined("empty bucket"), None)
        return GroupMetrics(n, auc(pred[mask], labels[mask]), mean_logloss(pred[mask], labels[mask]))

    report = MetricsReport(
        group(np.ones(len(pred), bool)),
        {name: group(buckets == k) for k, name in enumerate(BUCKETS)},
    )
    if base is not None:
        compare(report, base, base_name)
    return report


def compare(target: MetricsReport, base: MetricsReport, base_name: str | None = None) -> MetricsReport:
    """Fill RelaImpr on ``target`` in place from ``base``'s AUCs."""
    base_groups = base.groups()
    for name, g in target.groups().items():
        b = base_groups[name].auc
        if g.auc is None or b is None:
            g.rela_impr = Undefined("AUC missing")
        else:
            g.rela_impr = rela_impr(g.auc, b)
    target.base_name = base_name
    return target
