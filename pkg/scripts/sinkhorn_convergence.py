"""How many alternating-scaling rounds random 4x6 instances need to reach the exact entropic plan.

    python3 scripts/sinkhorn_convergence.py --eps 0.01 --instances 50
"""

import argparse
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from aqcl.codebook import SinkhornConfig, cosine, sinkhorn_assign

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from sinkhorn_oracle import entropic_plan  # noqa: E402

BUDGETS = (500, 1000, 2000, 5000, 20000, 100000)


def rounds_needed(q, z, eps, gap_tol, marg_tol):
    target = entropic_plan(cosine(q, z), eps)
    T, B = target.shape
    for n in BUDGETS:
        a = sinkhorn_assign(q, z, SinkhornConfig(eps, n))
        marg = max(np.abs(a.sum(0) - 1 / B).max(), np.abs(a.sum(1) - 1 / T).max())
        if np.abs(a - target).max() <= gap_tol and marg <= marg_tol:
            return str(n)
    return f">{BUDGETS[-1]}"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, default=0.01)
    ap.add_argument("--instances", type=int, default=50)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    counts = Counter()
    for _ in range(args.instances):
        q, z = rng.standard_normal((4, args.dim)), rng.standard_normal((6, args.dim))
        counts[rounds_needed(q, z, args.eps, 1e-5, 1e-8)] += 1
    for k in sorted(counts, key=lambda s: (s.startswith(">"), int(s.lstrip(">")))):
        print(f"<= {k} rounds\t{counts[k]}" if not k.startswith(">") else f"{k} rounds\t{counts[k]}")


if __name__ == "__main__":
    main()
