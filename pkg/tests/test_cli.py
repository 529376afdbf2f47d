import json
import logging

import pytest

from graphtransformer import checkpoint
from graphtransformer.cli import main, sha256_file
from graphtransformer.graph import render_penman
from graphtransformer.toydata import toy_corpus
from helpers import FIG1_AMR, FIG1_SNT, TINY
from test_graph import CONLLU

TINY_CFG = "".join(f"{k} = {v}\n" for k, v in TINY.items()) + "max_steps = 20\nbatch_size = 5\nwarmup = 10\n"


@pytest.fixture
def corpus(tmp_path):
    src = tmp_path / "toy.amr"
    pairs = toy_corpus(10)
    src.write_text("".join(f"# ::snt {s}\n{render_penman(g)}\n\n" for g, s in pairs))
    (tmp_path / "ref.txt").write_text("".join(s + "\n" for _, s in pairs))
    (tmp_path / "tiny.cfg").write_text(TINY_CFG)
    assert main(["preprocess", "--format", "penman", "--in", str(src), "--out", str(tmp_path / "toy.jsonl")]) == 0
    return tmp_path


@pytest.fixture
def trained(corpus):
    d = corpus
    rc = main(["train", "--config", str(d / "tiny.cfg"), "--data", str(d / "toy.jsonl"), "--out-dir", str(d / "run"),
               "--set", "save_every=10", "--seed", "3"])
    assert rc == 0
    return d


def test_preprocess_fig1(tmp_path, capsys):
    src = tmp_path / "fig1.amr"
    src.write_text(f"# ::snt {FIG1_SNT}\n{FIG1_AMR}\n")
    out = tmp_path / "fig1.jsonl"
    assert main(["preprocess", "--format", "penman", "--in", str(src), "--out", str(out)]) == 0
    line = capsys.readouterr().out
    assert "n=4.00" in line and "m=4.00" in line and "diameter=2.00" in line
    rec = json.loads(out.read_text())
    assert rec["target"] == FIG1_SNT and rec["stats"]["reentrancies"] == 1
    assert rec["paths"]["paths"][0][3] == [["ARG1", "ARG0"]]
    manifest = json.loads((tmp_path / "fig1.jsonl.manifest.json").read_text())
    assert manifest["inputs"][str(src)] == sha256_file(src)
    assert manifest["artifacts"] == [str(out)]
    assert len(manifest["config_hash"]) == 64


def test_preprocess_errors(tmp_path, capsys, caplog):
    empty = tmp_path / "empty.amr"
    empty.write_text("")
    assert main(["preprocess", "--format", "penman", "--in", str(empty), "--out", str(tmp_path / "o")]) == 2
    assert main(["preprocess", "--format", "penman", "--in", str(tmp_path / "nope"), "--out", "o"]) == 1
    assert main(["preprocess", "--format", "xml", "--in", str(empty), "--out", "o"]) == 1
    three = tmp_path / "three.amr"
    three.write_text("(a / b)\n\n(c / d :ARG0\n\n(e / f :ARG1 (g / h))\n")
    assert main(["preprocess", "--format", "penman", "--in", str(three), "--out", str(tmp_path / "x")]) == 2
    assert "three.amr:3" in capsys.readouterr().err
    with caplog.at_level(logging.WARNING, logger="graphtransformer"):
        rc = main(["preprocess", "--format", "penman", "--in", str(three), "--out", str(tmp_path / "x"),
                   "--skip-bad"])
    assert rc == 0
    assert len((tmp_path / "x").read_text().splitlines()) == 2
    assert len([r for r in caplog.records if "skipping" in r.message]) == 1


def test_preprocess_conllu(tmp_path, capsys):
    src = tmp_path / "s.conllu"
    src.write_text(CONLLU)
    out = tmp_path / "s.jsonl"
    assert main(["preprocess", "--format", "conllu", "--in", str(src), "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert rec["graph"]["mode"] == "dep" and rec["target"] == "Der Hund bellt laut"


def test_evaluate(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("the cat sat on the mat\na b c d e\n")
    assert main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "h.txt")]) == 0
    assert capsys.readouterr().out.strip() == "100.0"
    assert main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "h.txt"),
                 "--metric", "chrfpp", "--out", str(tmp_path / "s.json")]) == 0
    assert json.loads((tmp_path / "s.json").read_text())["score"] == pytest.approx(100.0)
    (tmp_path / "r.txt").write_text("one line\n")
    assert main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt")]) == 2


def test_train_generate_analyze(trained, capsys):
    d = trained
    run = d / "run"
    assert {"last.ckpt", "step_10.ckpt", "step_20.ckpt", "metrics.csv", "manifest.json", "config.txt"} <= \
        {p.name for p in run.iterdir()}
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seeds"] == {"seed": 3} and str(run / "last.ckpt") in manifest["artifacts"]
    gen = ["generate", "--ckpt", str(run / "last.ckpt"), "--in", str(d / "toy.jsonl"), "--beam", "1"]
    assert main(gen + ["--out", str(d / "h1.txt")]) == 0
    assert main(gen + ["--out", str(d / "h2.txt")]) == 0
    assert (d / "h1.txt").read_bytes() == (d / "h2.txt").read_bytes()
    assert len((d / "h1.txt").read_text().splitlines()) == 10
    capsys.readouterr()
    assert main(["analyze", "--ckpt", str(run / "last.ckpt"), "--data", str(d / "toy.jsonl"),
                 "--report", "attn-distance", "--out", str(d / "attn.csv")]) == 0
    rows = (d / "attn.csv").read_text().splitlines()
    assert rows[0] == "layer,head,avg_distance" and len(rows) - 1 == TINY["layers"] * TINY["heads"]
    assert main(["analyze", "--hyp", str(d / "h1.txt"), "--data", str(d / "toy.jsonl"), "--report", "size",
                 "--out", str(d / "size.json")]) == 0
    assert sum(json.loads((d / "size.json").read_text())["counts"]) == 10


def test_resume_via_cli(trained):
    d = trained
    rc = main(["train", "--config", str(d / "tiny.cfg"), "--data", str(d / "toy.jsonl"), "--out-dir",
               str(d / "run2"), "--resume", str(d / "run" / "step_10.ckpt"), "--seed", "3", "--set", "save_every=10"])
    assert rc == 0
    a, _ = checkpoint.load(d / "run" / "last.ckpt")
    b, _ = checkpoint.load(d / "run2" / "last.ckpt")
    assert all((a[k] == b[k]).all() for k in a)


def test_refuses_foreign_checkpoint_version(trained, capsys):
    d = trained
    tensors, meta = checkpoint.load(d / "run" / "last.ckpt")
    meta["code_version"] = "9.9.9"
    checkpoint.save(d / "old.ckpt", tensors, meta)
    rc = main(["generate", "--ckpt", str(d / "old.ckpt"), "--in", str(d / "toy.jsonl"), "--out", str(d / "h")])
    assert rc == 2 and "version" in capsys.readouterr().err


def test_usage_errors(corpus, capsys):
    d = corpus
    assert main([]) == 1
    assert main(["train", "--data", str(d / "toy.jsonl")]) == 1
    assert main(["train", "--data", str(d / "toy.jsonl"), "--out-dir", str(d / "r"), "--set", "bogus=1"]) == 1
    assert main(["generate", "--ckpt", str(d / "missing.ckpt"), "--in", str(d / "toy.jsonl"), "--out", "x"]) == 1
    assert main(["analyze", "--data", str(d / "toy.jsonl"), "--report", "size", "--out", str(d / "o")]) == 1
    assert main(["--version"]) == 0
