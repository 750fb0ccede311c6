import subprocess
import sys

import pytest

from zsnmt.cli import InputLineError, _read_input, main


def test_read_input_rejects_bad_lines(tmp_path):
    good = tmp_path / "good"
    good.write_bytes(b"a b\n\nc\n")
    assert _read_input(good) == [("a", "b"), (), ("c",)]
    bad = tmp_path / "bad"
    bad.write_bytes(b"ok\n\xff\xfe\n")
    with pytest.raises(InputLineError, match=r"bad:2"):
        _read_input(bad)
    ctrl = tmp_path / "ctrl"
    ctrl.write_bytes(b"ok\nfine\nx\x07y\n")
    with pytest.raises(InputLineError, match=r"ctrl:3"):
        _read_input(ctrl)
    tag = tmp_path / "tag"
    tag.write_text("<2l1> ciao\n")
    with pytest.raises(InputLineError, match=r"tag:1"):
        _read_input(tag)


def test_bleu_subcommand(tmp_path, capsys):
    (tmp_path / "h").write_text("the cat sat on\n")
    (tmp_path / "r").write_text("the cat sat on the mat\n")
    assert main(["bleu", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")]) == 0
    assert capsys.readouterr().out.strip() == (
        "BLEU = 60.65, 100.0/100.0/100.0/100.0 (BP=0.607, ratio=0.667, hyp_len=4, ref_len=6)"
    )


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["bleu", "--hyp", str(tmp_path / "missing"), "--ref", str(tmp_path / "missing")]) == 2
    assert "error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.yaml"
    cfg.write_text(
        "family: {n_stems: 20, n_templates: 5, max_arity: 5}\n"
        "data: {n_train: 30, n_valid: 4, n_test: 4}\n"
    )
    assert main(["gen-data", "--config", str(cfg), "--seed", "3", "--out", str(d / "data")]) == 0
    assert main(["learn-bpe", "--data", str(d / "data"), "--merges", "30", "--out", str(d / "bpe")]) == 0
    assert main(["train", "--data", str(d / "data"), "--bpe", str(d / "bpe"), "--out", str(d / "m" / "ckpt"),
                 "--epochs", "1", "--emb-dim", "8", "--hidden-dim", "8", "--log", str(d / "train.log")]) == 0
    return d


def test_pipeline_subcommands(workdir, capsys):
    d = workdir
    assert (d / "data" / "family.json").exists() and (d / "bpe" / "codes").exists()
    assert (d / "train.log").read_text().startswith("epoch,phase,lr,train_loss,valid_ppl\n")
    src = d / "data" / "test.l1-l2.l1"
    out = d / "out.txt"
    assert main(["apply-bpe", "--codes", str(d / "bpe" / "codes"), "--input", str(src), "--output", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4
    assert main(["translate", "--model", str(d / "m" / "ckpt"), "--bpe", str(d / "bpe"), "--src", "l1",
                 "--tgt", "l2", "--beam", "2", "--input", str(src), "--output", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4
    assert main(["pivot", "--model", str(d / "m" / "ckpt"), "--bpe", str(d / "bpe"), "--src", "l1",
                 "--tgt", "l2", "--beam", "2", "--input", str(src), "--output", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4


def test_translate_names_the_bad_line(workdir, capsys):
    bad = workdir / "bad.txt"
    bad.write_bytes(b"fine words\nbroken \xff\n")
    rc = main(["translate", "--model", str(workdir / "m" / "ckpt"), "--bpe", str(workdir / "bpe"),
               "--src", "l1", "--tgt", "l2", "--input", str(bad)])
    assert rc == 2
    assert "bad.txt:2" in capsys.readouterr().err


def test_run_report_and_loop_subcommands(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "family: {n_stems: 20, n_templates: 5, max_arity: 5}\n"
        "data: {n_train: 30, n_valid: 4, n_test: 4}\n"
        "bpe: {merges: 30}\nmodel: {emb_dim: 8, hidden_dim: 8}\nbeam: 2\n"
        "baseline: {epochs: 1}\nrounds: {epochs: 1}\nbilingual: {epochs: 1}\nloop: {rounds: 1}\n"
    )
    run = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(run)]) == 0
    first = capsys.readouterr().out
    assert "# zero-shot directions" in first
    assert main(["report", "--run", str(run)]) == 0
    assert capsys.readouterr().out == (run / "report.txt").read_text()
    assert main(["zeroshot-loop", "--run", str(run)]) == 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "zsnmt.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("gen-data", "learn-bpe", "apply-bpe", "train", "translate", "pivot", "bleu",
                "zeroshot-loop", "report", "run"):
        assert sub in out.stdout
