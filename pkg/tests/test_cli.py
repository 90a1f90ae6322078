import json

import pytest

from adgcd.cli import main

FAST = ["--set", "warmup_iters=5", "--set", "main_iters=1", "--set", "k_fixed=7", "--set", "hidden_dim=16", "--set", "embed_dim=8"]


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    gen_cfg = out / "gen.cfg"
    gen_cfg.write_text("samples_per_class = 25\nclass_sep = 3.0\nseed = 1\n")
    assert main(["generate", "--config", str(gen_cfg), "--out", str(out)]) == 0
    return out


def test_generate_train_eval_report(generated, tmp_path, capsys):
    src, tgt = generated / "source.gcde", generated / "target.gcde"
    run = tmp_path / "run"
    assert main(["train", "--source", str(src), "--target", str(tgt), "--out", str(run), "--pca", *FAST]) == 0
    for name in ("report.json", "summary.csv", "timing.json", "target_pca.csv", "assignment.csv", "model.ckpt"):
        assert (run / name).exists(), name
    report = json.loads((run / "report.json").read_text())
    assert report["k"] == 7 and 0 <= report["metrics"]["all"] <= 1

    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--target", str(tgt), "--out", str(ev)]) == 0
    again = json.loads((ev / "report.json").read_text())
    # same embeddings, same seed and K: eval reproduces the training-time clustering
    assert again["metrics"] == report["metrics"]

    capsys.readouterr()
    assert main(["report", str(run / "report.json"), "--csv", str(tmp_path / "r.csv")]) == 0
    assert "K = 7" in capsys.readouterr().out
    assert (tmp_path / "r.csv").read_text().startswith("k,all,old,new")


def test_estimate_k(generated, capsys):
    args = ["estimate-k", "--source", str(generated / "source.gcde"), "--target", str(generated / "target.gcde")]
    assert main([*args, "--method", "elbow", "--set", "k_max=12", "--set", "n_init=2"]) == 0
    k = int(capsys.readouterr().out.strip())
    assert 4 <= k <= 12


def test_config_error_exit_code(generated, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("lr = -1\n")
    args = ["train", "--source", str(generated / "source.gcde"), "--target", str(generated / "target.gcde"), "--out", str(tmp_path)]
    assert main([*args, "--config", str(bad)]) == 2
    assert main([*args, "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["generate", "--set", "n_known=0", "--out", str(tmp_path)]) == 2


def test_data_error_exit_code(generated, tmp_path, monkeypatch):
    junk = tmp_path / "junk.gcde"
    junk.write_bytes(b"not a dataset")
    args = ["train", "--source", str(junk), "--target", str(generated / "target.gcde"), "--out", str(tmp_path / "o")]
    assert main(args) == 3
    assert main(["train", "--source", str(tmp_path / "nope.gcde"), "--target", str(junk), "--out", str(tmp_path)]) == 3
    assert main(["report", str(tmp_path / "none.json")]) == 3


def test_thread_cap_env(generated, tmp_path, monkeypatch):
    monkeypatch.setenv("GCD_THREADS", "1")
    assert main(["generate", "--set", "samples_per_class=3", "--out", str(tmp_path)]) == 0
    monkeypatch.setenv("GCD_THREADS", "zero")
    assert main(["generate", "--out", str(tmp_path)]) == 2
