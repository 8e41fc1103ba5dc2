"""Train the Logloss-only baseline and AQCL on planted-interest worlds and compare test AUC.

Writes result.json and a TSV summary to --out and prints the summary.

    python3 scripts/run_synthetic_experiment.py --seeds 0 1 2 3 4 --out runs/synthetic
"""

import argparse
import logging
from pathlib import Path

from aqcl import experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--aux-weight", type=float, help="weight on the auxiliary loss")
    ap.add_argument("--alpha-const", type=float, help="fixed alpha instead of the length schedule")
    ap.add_argument("--w1", type=float)
    ap.add_argument("--w2", type=float)
    ap.add_argument("--out", default="runs/synthetic")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = experiment.ExperimentConfig(seeds=tuple(args.seeds))
    if args.aux_weight is not None:
        cfg.loss.aux_weight = args.aux_weight
    if args.alpha_const is not None:
        cfg.alpha_const = args.alpha_const
    if args.w1 is not None:
        cfg.w1 = args.w1
    if args.w2 is not None:
        cfg.w2 = args.w2

    res = experiment.run(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(experiment.to_json(res))
    table = experiment.summary_table(res)
    (out / "summary.tsv").write_text(table)
    print(table, end="")
    print(f"total {res['seconds']:.0f}s")


if __name__ == "__main__":
    main()
