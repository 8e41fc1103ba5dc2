import csv
import json
import re

import numpy as np
import pytest
import yaml

from aqcl.cli import build_parser, load_splits, main, resolve_config
from aqcl.codebook import topk_codewords
from aqcl.metrics import GroupMetrics, MetricsReport
from aqcl.model import load_checkpoint
from aqcl.trainer import latent_dataset

TINY = {
    "seed": 3,
    "gen": {"n_users": 300, "n_items": 64, "length_ranges": [[0, 2], [3, 5], [6, 8]], "timeline": 5000},
    "model": {"embed_dim": 4, "hidden_dims": [8, 6], "projector_dims": [8, 8], "z_dim": 4},
    "loss": {"top_k": 2},
    "codebook": {"capacity": 8},
    "train": {"batch_size": 64, "max_epochs": 2, "patience": 1},
}


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["gen", "--config", str(cfg), "--out", str(root / "gen")]) == 0
    data = root / "gen" / "dataset.csv"
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(root / "train")]) == 0
    return root, cfg, data


def test_missing_config_is_an_error_naming_the_path(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["gen", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["command"] == "gen" and str(missing) in err["message"]


def test_bad_mixture_is_rejected(tmp_path, capsys):
    bad = dict(TINY, gen={**TINY["gen"], "mixture": [0.5, 0.3, 0.1]})
    assert main(["gen", "--config-json", json.dumps(bad), "--out", str(tmp_path / "o")]) != 0
    assert "mixture" in json.loads(capsys.readouterr().err.strip())["message"]


def test_unknown_config_key_is_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"learning_rate": 0.1}}))
    assert main(["gen", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_gen_is_reproducible(work, tmp_path):
    root, cfg, _ = work
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert manifest(root / "gen")["outputs"] == manifest(tmp_path / "again")["outputs"]


def test_default_run_dir_lives_under_artifact_root(tmp_path, monkeypatch, work):
    _, cfg, _ = work
    monkeypatch.setenv("AQCL_ARTIFACT_ROOT", str(tmp_path / "art"))
    assert main(["gen", "--config", str(cfg)]) == 0
    (d,) = list((tmp_path / "art").iterdir())
    assert (d / "manifest.json").is_file()
    assert re.fullmatch(r"\d{8}T\d{6}-[0-9a-f]{12}", d.name)


def test_flags_override_file_which_overrides_defaults(work):
    _, cfg, _ = work
    args = build_parser().parse_args(["train", "--config", str(cfg), "--seed", "9", "--aux", "icl"])
    rc = resolve_config(args)
    assert rc.seed == 9 and rc.train.seed == 9 and rc.gen.seed == 9
    assert rc.train.aux == "icl"
    assert rc.train.batch_size == 64  # from the file
    assert rc.train.lr == 1e-3  # built-in default


def test_train_writes_reports_trace_and_manifest(work):
    root, _, data = work
    d = root / "train"
    m = manifest(d)
    assert m["status"] == "ok" and m["seed"] == 3
    assert set(m["outputs"]) == {"trace", "checkpoint", "val_report", "test_report"}
    assert m["inputs"]["data"]["sha256"] == manifest(root / "gen")["outputs"]["dataset"]["sha256"]
    rep = json.loads((d / "test_report.json").read_text())
    assert set(rep) >= {"overall", "non_active", "slightly_active", "highly_active"}
    kinds = {json.loads(line)["type"] for line in (d / "trace.jsonl").read_text().splitlines()}
    assert kinds == {"step", "epoch"}


@pytest.mark.parametrize("extra", [["--aux", "none"], ["--aux", "icl"], ["--alpha-const", "1.0"]])
def test_aux_modes_train(work, tmp_path, extra):
    _, cfg, data = work
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "t"), *extra]) == 0


def test_rerun_reproduces_every_output(work, tmp_path):
    root, _, _ = work
    for name in ("gen", "train"):
        assert main(["rerun", str(root / name / "manifest.json"), "--out", str(tmp_path / name)]) == 0
        assert manifest(tmp_path / name)["outputs"] == manifest(root / name)["outputs"]


def test_eval_and_compare_against_self_give_zero_improvement(work, tmp_path, capsys):
    root, cfg, data = work
    ckpt = root / "train" / "model.ckpt"
    test_rep = root / "train" / "test_report.json"
    assert main(["eval", "--config", str(cfg), "--data", str(data), "--checkpoint", str(ckpt), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "report.json").read_text() == test_rep.read_text()
    assert main(["compare", str(test_rep), str(test_rep), "--out", str(tmp_path / "c")]) == 0
    rep = json.loads((tmp_path / "c" / "compare.json").read_text())
    for g in ("overall", "non_active", "slightly_active", "highly_active"):
        if rep[g]["auc"] is not None and rep[g]["auc"] > 0.5:
            assert rep[g]["rela_impr"] == 0.0
    assert "rela_impr" in capsys.readouterr().out


def _report(auc):
    g = GroupMetrics(auc=auc, logloss=0.5, count=10)
    return MetricsReport(g, {b: g for b in ("non_active", "slightly_active", "highly_active")})


def test_compare_prints_relative_improvement(tmp_path, capsys):
    t, b, half = tmp_path / "t.json", tmp_path / "b.json", tmp_path / "h.json"
    t.write_text(_report(0.7078).to_json())
    b.write_text(_report(0.6956).to_json())
    half.write_text(_report(0.5).to_json())
    assert main(["compare", str(t), str(b), "--out", str(tmp_path / "c")]) == 0
    rep = json.loads((tmp_path / "c" / "compare.json").read_text())
    assert abs(rep["overall"]["rela_impr"] - 6.24) < 0.005
    assert "6.237" in capsys.readouterr().out
    assert main(["compare", str(t), str(half), "--out", str(tmp_path / "h")]) == 0
    rep = json.loads((tmp_path / "h" / "compare.json").read_text())
    assert rep["overall"]["rela_impr"] is None


def test_export_reps_rows_columns_and_nearest_codeword(work, tmp_path):
    root, cfg, data = work
    ckpt = root / "train" / "model.ckpt"
    out = tmp_path / "x"
    assert main(["export-reps", "--config", str(cfg), "--data", str(data), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    with open(out / "reps.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [f"h{k}" for k in range(6)] + ["interest_id"]
    splits, _ = load_splits(resolve_config(build_parser().parse_args(["train", "--config", str(cfg), "--data", str(data)])))
    assert len(rows) - 1 == len(splits.test)
    mc, params, _ = load_checkpoint(ckpt)
    _, z = latent_dataset(mc, params, splits.test)
    expect = [topk_codewords(params["codebook"], v, 1)[0] for v in z]
    assert np.array_equal([int(r[-1]) for r in rows[1:]], expect)


def test_search_alpha_serial_and_parallel_agree(work, tmp_path):
    _, cfg, data = work
    grid = ["--config-json", json.dumps({**TINY, "search": {"candidates": [[0.5, 1.0], [2.0, 2.0]]}})]
    assert main(["search-alpha", *grid, "--data", str(data), "--out", str(tmp_path / "s")]) == 0
    assert main(["search-alpha", *grid, "--data", str(data), "--parallel", "2", "--out", str(tmp_path / "p")]) == 0
    a = json.loads((tmp_path / "s" / "search_report.json").read_text())
    b = json.loads((tmp_path / "p" / "search_report.json").read_text())
    assert a["selected"] == b["selected"] and a["candidates"] == b["candidates"]
    assert set(json.loads((tmp_path / "s" / "timings.json").read_text())) == {"w1=0.5,w2=1", "w1=2,w2=2"}


def test_search_alpha_single_candidate(work, tmp_path):
    _, _, data = work
    one = json.dumps({**TINY, "search": {"candidates": [[1.0, 0.5]]}})
    assert main(["search-alpha", "--config-json", one, "--data", str(data), "--out", str(tmp_path / "s")]) == 0
    assert json.loads((tmp_path / "s" / "search_report.json").read_text())["selected"]["w1"] == 1.0
