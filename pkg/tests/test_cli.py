import json

import pytest

from forge import geninst
from forge.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, derive_seed, run
from forge.heads import read_hints
from forge.mipmodel import write_mps
from forge.trainer import load_checkpoint


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    assert run(["gen", "--families", "sc,vc,is,bp", "--sizes", "easy", "--count", "3",
                "--seed", "7", "--out", str(corpus)]) == EXIT_OK
    ck = root / "model.forge"
    assert run(["pretrain", "--corpus", str(corpus), "--d", "8", "--k", "16", "--epochs", "1",
                "--seed", "1", "--out", str(ck)]) == EXIT_OK
    return root


def test_gen_writes_manifest_and_run_record(workdir):
    lines = (workdir / "corpus" / "manifest.csv").read_text().splitlines()
    assert len(lines) == 1 + 12
    rec = json.loads((workdir / "corpus" / "run.json").read_text())
    assert rec["command"] == "gen" and rec["seed"] == 7
    assert "timestamp" not in json.dumps(rec)


def test_gen_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(["gen", "--families", "vc", "--sizes", "easy", "--count", "2", "--seed", "3",
                    "--out", str(tmp_path / name)]) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        if f == "run.json":  # records the differing --out path
            continue
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_pretrain_outputs(workdir):
    ck = load_checkpoint(workdir / "model.forge")
    assert ck.config.d == 8 and ck.config.k == 16 and ck.config.seed == 1
    assert (workdir / "model.loss.csv").exists()
    rec = json.loads((workdir / "model.run.json").read_text())
    assert rec["options"]["d"] == 8
    assert all(len(i["sha256"]) == 64 for i in rec["inputs"])
    assert str(workdir / "model.forge") in rec["outputs"]


def test_pretrain_determinism(workdir, tmp_path):
    args = ["pretrain", "--corpus", str(workdir / "corpus"), "--d", "8", "--k", "16", "--epochs", "1",
            "--seed", "1", "--deterministic"]
    assert run(args + ["--out", str(tmp_path / "x.forge")]) == EXIT_OK
    assert (tmp_path / "x.forge").read_bytes() == (workdir / "model.forge").read_bytes()


def test_embed_and_cluster(workdir, capsys):
    out = workdir / "emb.csv"
    assert run(["embed", "--corpus", str(workdir / "corpus"), "--ckpt", str(workdir / "model.forge"),
                "--out", str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()
    assert len(rows) == 13
    capsys.readouterr()
    assert run(["cluster", "--corpus", str(workdir / "corpus"), "--ckpt", str(workdir / "model.forge"),
                "--k-clusters", "4", "--runs", "2", "--baselines", "--projection",
                str(workdir / "proj.csv"), "--out", str(workdir / "clusters.csv")]) == EXIT_OK
    text = capsys.readouterr().out
    nmi = float(next(l for l in text.splitlines() if l.startswith("nmi ")).split()[1])
    assert 0.0 <= nmi <= 1.0 and "nmi_labelprop" in text
    assert (workdir / "proj.csv").exists()


def test_arith_and_report(workdir, capsys):
    assert run(["arith", "--corpus", str(workdir / "corpus"), "--ckpt", str(workdir / "model.forge"),
                "--out", str(workdir / "arith.csv")]) == EXIT_OK
    assert run(["report", "--ckpt", str(workdir / "model.forge"), "--corpus",
                str(workdir / "corpus")]) == EXIT_OK
    assert "model.forge" in capsys.readouterr().out


def test_gap_finetune_cut_and_hints(workdir, tmp_path):
    gap_ck = tmp_path / "gap.forge"
    assert run(["finetune-gap", "--corpus", str(workdir / "corpus"), "--ckpt", str(workdir / "model.forge"),
                "--epochs", "1", "--node-limit", "50", "--holdout", "0.25",
                "--labels-out", str(tmp_path / "labels.csv"), "--out", str(gap_ck)]) == EXIT_OK
    inst = tmp_path / "tri.mps"
    inst.write_text(write_mps(geninst.tiny_instance("vc", 3, 10)))
    assert run(["cut", "--instance", str(inst), "--ckpt", str(gap_ck), "--report",
                str(tmp_path / "cut.csv"), "--out", str(tmp_path / "cut.mps")]) == EXIT_OK
    assert (tmp_path / "cut.mps").exists() and (tmp_path / "cut.csv").exists()
    # the gap checkpoint has no guidance head
    assert run(["hints", "--instance", str(inst), "--ckpt", str(gap_ck),
                "--out", str(tmp_path / "h.txt")]) == EXIT_DATA


def test_guidance_and_hints(workdir, tmp_path):
    corpus = tmp_path / "gc"
    assert run(["gen", "--families", "vc,is", "--sizes", "easy", "--count", "3", "--seed", "2",
                "--out", str(corpus)]) == EXIT_OK
    g_ck = tmp_path / "guide.forge"
    assert run(["finetune-guide", "--corpus", str(corpus), "--ckpt", str(workdir / "model.forge"),
                "--epochs", "1", "--node-limit", "100", "--holdout", "0.34", "--out", str(g_ck)]) == EXIT_OK
    inst = tmp_path / "v.mps"
    inst.write_text(write_mps(geninst.tiny_instance("vc", 5, 12)))
    assert run(["hints", "--instance", str(inst), "--ckpt", str(g_ck), "--out",
                str(tmp_path / "h.txt")]) == EXIT_OK
    hints = read_hints(tmp_path / "h.txt")
    assert not set(hints.include) & set(hints.exclude)


def test_usage_errors(tmp_path, capsys):
    assert run(["nonsense"]) == EXIT_USAGE
    assert run(["gen", "--out", str(tmp_path / "x"), "--sizes", "huge"]) == EXIT_USAGE
    assert run(["gen", "--out", str(tmp_path / "x"), "--jobs", "0"]) == EXIT_USAGE
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    assert run(["gen", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert run(["--version"]) == EXIT_OK


def test_data_errors(tmp_path):
    assert run(["pretrain", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path / "m")]) == EXIT_DATA
    bad = tmp_path / "bad.forge"
    bad.write_bytes(b"not a checkpoint")
    assert run(["report", "--ckpt", str(bad)]) == EXIT_DATA


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# gen settings\nfamilies = vc\nsizes = easy\ncount = 2\nseed = 11\n")
    assert run(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
    rec = json.loads((tmp_path / "a" / "run.json").read_text())
    assert rec["seed"] == 11 and rec["options"]["count"] == 2
    assert run(["gen", "--config", str(cfg), "--count", "1", "--seed", "12",
                "--out", str(tmp_path / "b")]) == EXIT_OK
    rec = json.loads((tmp_path / "b" / "run.json").read_text())
    assert rec["seed"] == 12 and rec["options"]["count"] == 1


def test_config_supplies_required_flag(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"out = {tmp_path / 'c'}\nfamilies = is\nsizes = easy\ncount = 1\n")
    assert run(["gen", "--config", str(cfg)]) == EXIT_OK
    assert (tmp_path / "c" / "manifest.csv").exists()


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("FORGE_SEED", "42")
    assert run(["gen", "--families", "vc", "--sizes", "easy", "--count", "1",
                "--out", str(tmp_path / "a")]) == EXIT_OK
    assert json.loads((tmp_path / "a" / "run.json").read_text())["seed"] == 42
    monkeypatch.setenv("FORGE_SEED", "abc")
    assert run(["gen", "--families", "vc", "--count", "1", "--out", str(tmp_path / "b")]) == EXIT_USAGE
    monkeypatch.delenv("FORGE_SEED")
    assert run(["gen", "--families", "vc", "--sizes", "easy", "--count", "1",
                "--out", str(tmp_path / "c")]) == EXIT_OK
    assert json.loads((tmp_path / "c" / "run.json").read_text())["seed"] == 0


def test_derive_seed_streams_differ():
    seeds = {derive_seed(5, s) for s in ("split", "mining", "labels")}
    assert len(seeds) == 3
    assert derive_seed(5, "split") == derive_seed(5, "split")
    assert derive_seed(5, "split") != derive_seed(6, "split")
    with pytest.raises(ValueError):
        derive_seed(5, "other")
