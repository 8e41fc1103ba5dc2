"""Command-line entry points: gen, train, search-alpha, eval, compare, export-reps, rerun.

Every command writes into a fresh run directory (``--out`` or
``$AQCL_ARTIFACT_ROOT/<UTC timestamp>-<digest>``) together with a
``manifest.json`` that records the resolved config, seed, input digests and
output paths. ``aqcl rerun <manifest>`` repeats the command from the manifest
alone. Failures print one JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .alphasearch import TrialSpec, search
from .codebook import assign_interest
from .config import ConfigError, RunConfig, load
from .data import IngestConfig, generate, ingest, split_and_bucket
from .metrics import MetricsReport, compare
from .model import load_checkpoint, save_checkpoint
from .schedule import AlphaSchedule
from .trainer import TrainingDiverged, evaluate, latent_dataset, train

ARTIFACT_ROOT_ENV = "AQCL_ARTIFACT_ROOT"
EXIT_USAGE, EXIT_FAILED, EXIT_DIVERGED = 2, 1, 3

log = logging.getLogger("aqcl")


class CommandError(RuntimeError):
    pass


# ------------------------------------------------------------------ helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


class Run:
    """A run directory plus the manifest being assembled for it."""

    def __init__(self, command: str, cfg: RunConfig | None, args: dict, inputs: dict[str, Path], out: str | None):
        self.command = command
        self.cfg = cfg
        self.args = args
        self.inputs = {k: Path(v) for k, v in inputs.items()}
        for name, p in self.inputs.items():
            if not p.is_file():
                raise CommandError(f"input {name} not found: {p}")
        self.input_digests = {k: sha256(p) for k, p in self.inputs.items()}
        ident = json.dumps(
            {"command": command, "config": cfg.to_dict() if cfg else None, "args": args, "inputs": self.input_digests},
            sort_keys=True,
        )
        self.digest = hashlib.sha256(ident.encode()).hexdigest()[:12]
        if out:
            self.dir = Path(out)
        else:
            root = Path(os.environ.get(ARTIFACT_ROOT_ENV, "runs"))
            stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
            self.dir = root / f"{stamp}-{self.digest}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs: dict[str, Path] = {}

    def path(self, name: str, filename: str) -> Path:
        p = self.dir / filename
        self.outputs[name] = p
        return p

    def manifest(self, status: str = "ok", **extra) -> Path:
        m = {
            "tool": "aqcl",
            "version": __version__,
            "command": self.command,
            "args": self.args,
            "seed": self.cfg.seed if self.cfg else None,
            "config": self.cfg.to_dict() if self.cfg else None,
            "inputs": {k: {"path": str(p.resolve()), "sha256": self.input_digests[k]} for k, p in self.inputs.items()},
            "outputs": {
                k: {"path": p.name, "sha256": sha256(p) if p.exists() else None} for k, p in sorted(self.outputs.items())
            },
            "status": status,
            **extra,
        }
        return _write(self.dir / "manifest.json", json.dumps(m, sort_keys=True, indent=2) + "\n")


def resolve_config(args) -> RunConfig:
    """Built-in defaults < config file < command-line flags."""
    raw = load(args.config).to_dict() if getattr(args, "config", None) else {}
    if getattr(args, "config_json", None):
        raw = json.loads(args.config_json)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    train_over = raw.setdefault("train", {})
    if getattr(args, "aux", None) is not None:
        train_over["aux"] = args.aux
    if getattr(args, "alpha_const", None) is not None:
        train_over["alpha_const"] = args.alpha_const
    if getattr(args, "parallel", None) is not None:
        raw.setdefault("search", {})["workers"] = args.parallel
    if getattr(args, "data", None) is not None:
        raw.setdefault("data", {})["path"] = args.data
    return RunConfig.from_dict(raw)


def load_splits(cfg: RunConfig):
    """Dataset splits plus the data-file inputs that produced them."""
    d = cfg.data
    inputs: dict[str, Path] = {}
    if d.path is None:
        g = generate(cfg.gen)
        ds, boundaries = g.dataset, g.boundaries
    else:
        inputs["data"] = Path(d.path)
        if not inputs["data"].is_file():
            raise CommandError(f"dataset not found: {d.path}")
        ds, rejected = ingest(d.path, IngestConfig(max_malformed_fraction=d.max_malformed_fraction))
        if rejected:
            log.warning("%d rows rejected during ingest", len(rejected))
        boundaries = d.boundaries
        if boundaries is None:
            meta = Path(d.meta) if d.meta else Path(str(d.path) + ".meta.json")
            if not meta.is_file():
                raise CommandError(f"no split boundaries: set data.boundaries or provide {meta}")
            inputs["meta"] = meta
            boundaries = tuple(json.loads(meta.read_text())["boundaries"])
    return split_and_bucket(ds, boundaries, d.length_thresholds), inputs


def model_config(cfg: RunConfig, splits):
    ds = splits.train
    return cfg.model.build(ds.num_users, ds.num_items, ds.extra_vocab)


def _schedule(cfg: RunConfig, splits) -> AlphaSchedule | None:
    if cfg.train.aux != "aqcl" or cfg.train.alpha_const is not None:
        return None
    if splits.mean_length <= 0:
        raise CommandError("training split has no history: use --alpha-const")
    return AlphaSchedule(cfg.schedule.w1, cfg.schedule.w2, splits.mean_length)


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    cfg.gen.validate()
    run = Run("gen", cfg, {}, {}, args.out)
    g = generate(cfg.gen)
    data = run.path("dataset", "dataset.csv")
    g.dataset.write(data)
    meta = run.path("meta", "dataset.csv.meta.json")
    _write(meta, json.dumps({**g.meta(), "generator": cfg.to_dict()["gen"]}, sort_keys=True) + "\n")
    run.manifest()
    print(run.dir)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    splits, inputs = load_splits(cfg)
    run = Run("train", cfg, {}, inputs, args.out)
    mc = model_config(cfg, splits)
    trace_path = run.path("trace", "trace.jsonl")
    try:
        res = train(mc, cfg.loss, cfg.codebook, cfg.sinkhorn, cfg.augment, cfg.train, splits, _schedule(cfg, splits))
    except TrainingDiverged as exc:
        _write(trace_path, exc.trace.to_jsonl())
        run.manifest(status="diverged", error=str(exc))
        raise
    _write(trace_path, res.trace.to_jsonl())
    ckpt = run.path("checkpoint", "model.ckpt")
    save_checkpoint(ckpt, mc, {**res.params, "codebook": res.codebook}, {"best_epoch": res.best_epoch, "seed": cfg.seed})
    for split in ("val", "test"):
        ds = getattr(splits, split)
        rep = evaluate(mc, res.params, ds, splits.buckets_of(ds), cfg.train)
        _write(run.path(f"{split}_report", f"{split}_report.json"), rep.to_json())
    run.manifest(best_epoch=res.best_epoch)
    print(run.dir)
    return 0


def cmd_search_alpha(args) -> int:
    cfg = resolve_config(args)
    splits, inputs = load_splits(cfg)
    run = Run("search-alpha", cfg, {}, inputs, args.out)
    mc = model_config(cfg, splits)
    spec = TrialSpec(mc, cfg.loss, cfg.codebook, cfg.sinkhorn, cfg.augment, cfg.train, splits)
    res = search(cfg.search, spec)
    _write(run.path("report", "search_report.json"), res.report_json())
    _write(run.path("timings", "timings.json"), json.dumps(res.timings, sort_keys=True, indent=2) + "\n")
    run.manifest(selected={"w1": res.best.w1, "w2": res.best.w2})
    print(run.dir)
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    splits, inputs = load_splits(cfg)
    inputs["checkpoint"] = Path(args.checkpoint)
    if args.base:
        inputs["base"] = Path(args.base)
    run = Run("eval", cfg, {"split": args.split}, inputs, args.out)
    mc, params, _ = load_checkpoint(args.checkpoint)
    ds = getattr(splits, args.split)
    base = MetricsReport.from_dict(json.loads(Path(args.base).read_text())) if args.base else None
    rep = evaluate(mc, params, ds, splits.buckets_of(ds), cfg.train, base, Path(args.base).name if args.base else None)
    _write(run.path("report", "report.json"), rep.to_json())
    _write(run.path("table", "report.tsv"), rep.table())
    run.manifest()
    print(run.dir)
    return 0


def cmd_compare(args) -> int:
    run = Run("compare", None, {}, {"target": args.target, "base": args.base}, args.out)
    target = MetricsReport.from_dict(json.loads(Path(args.target).read_text()))
    base = MetricsReport.from_dict(json.loads(Path(args.base).read_text()))
    compare(target, base, Path(args.base).name)
    _write(run.path("report", "compare.json"), target.to_json())
    table = target.table()
    _write(run.path("table", "compare.tsv"), table)
    run.manifest()
    sys.stdout.write(table)
    return 0


def cmd_export_reps(args) -> int:
    cfg = resolve_config(args)
    splits, inputs = load_splits(cfg)
    inputs["checkpoint"] = Path(args.checkpoint)
    run = Run("export-reps", cfg, {"split": args.split}, inputs, args.out)
    mc, params, _ = load_checkpoint(args.checkpoint)
    if "codebook" not in params:
        raise CommandError(f"{args.checkpoint}: checkpoint holds no codebook")
    ds = getattr(splits, args.split)
    h, z = latent_dataset(mc, params, ds, cfg.train)
    interest = assign_interest(params["codebook"], z)
    out = run.path("reps", "reps.csv")
    header = ",".join([f"h{k}" for k in range(h.shape[1])] + ["interest_id"])
    with open(out, "w") as fh:
        fh.write(header + "\n")
        for row, k in zip(h, interest):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(k)}\n")
    run.manifest()
    print(run.dir)
    return 0


def cmd_rerun(args) -> int:
    """Repeat a recorded command from its manifest and check output digests."""
    m = json.loads(Path(args.manifest).read_text())
    argv = [m["command"], "--out", args.out]
    if m["config"] is not None:
        argv += ["--config-json", json.dumps(m["config"])]
    inputs = {k: v["path"] for k, v in m["inputs"].items()}
    for k, v in m["inputs"].items():
        if sha256(v["path"]) != v["sha256"]:
            raise CommandError(f"input {k} changed since the recorded run: {v['path']}")
    if m["command"] in ("eval", "export-reps"):
        argv += ["--checkpoint", inputs["checkpoint"], "--split", m["args"]["split"]]
        if "base" in inputs:
            argv += ["--base", inputs["base"]]
    if m["command"] == "compare":
        argv += [inputs["target"], inputs["base"]]
    code = main(argv, _raise=True)
    new = json.loads((Path(args.out) / "manifest.json").read_text())
    mismatched = [
        k for k, v in m["outputs"].items() if k != "timings" and new["outputs"].get(k, {}).get("sha256") != v["sha256"]
    ]
    if mismatched:
        raise CommandError(f"outputs differ from the recorded run: {', '.join(sorted(mismatched))}")
    return code


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aqcl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"aqcl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_split=False):
        sp.add_argument("--config", help="JSON or YAML run config")
        sp.add_argument("--config-json", help=argparse.SUPPRESS)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data", help="dataset CSV (overrides data.path)")
        sp.add_argument("--out", help="run directory (default: $%s/<timestamp>-<digest>)" % ARTIFACT_ROOT_ENV)
        if with_split:
            sp.add_argument("--checkpoint", required=True)
            sp.add_argument("--split", choices=("train", "val", "test"), default="test")

    g = sub.add_parser("gen", help="generate a planted-interest dataset")
    common(g)
    g.set_defaults(fn=cmd_gen)

    for name, fn, helptext in (
        ("train", cmd_train, "train one model and report val/test metrics"),
        ("search-alpha", cmd_search_alpha, "grid-search the alpha schedule"),
    ):
        t = sub.add_parser(name, help=helptext)
        common(t)
        t.add_argument("--aux", choices=("none", "icl", "aqcl"))
        t.add_argument("--alpha-const", type=float, help="fixed alpha instead of the schedule")
        if name == "search-alpha":
            t.add_argument("--parallel", type=int, help="worker processes")
        t.set_defaults(fn=fn)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(e, with_split=True)
    e.add_argument("--base", help="base report for RelaImpr")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("compare", help="RelaImpr of a target report over a base report")
    c.add_argument("target")
    c.add_argument("base")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_compare)

    x = sub.add_parser("export-reps", help="dump latent codes and nearest codeword per sample")
    common(x, with_split=True)
    x.set_defaults(fn=cmd_export_reps)

    r = sub.add_parser("rerun", help="repeat a run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_rerun)
    return p


def main(argv=None, _raise: bool = False) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except Exception as exc:
        if _raise:
            raise
        code = {
            ConfigError: EXIT_USAGE,
            TrainingDiverged: EXIT_DIVERGED,
        }.get(type(exc), EXIT_FAILED)
        record = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        sys.stderr.write(json.dumps(record) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
