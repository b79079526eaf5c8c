import hashlib
import subprocess
import sys

import pytest

from spkver.cli import main
from spkver.dataio import Label, ScoreSet, Trial, format_trials, load_embeddings, load_scores, write_scores


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def separated(tmp_path):
    trials = [Trial("a", "1", Label.TARGET), Trial("a", "2", Label.NONTARGET),
              Trial("b", "3", Label.TARGET), Trial("b", "1", Label.NONTARGET)]
    scores = ScoreSet([("a", "1", 0.9), ("a", "2", 0.1), ("b", "3", 0.8), ("b", "1", -0.2)])
    return write(tmp_path / "a.scores", write_scores(scores)), write(tmp_path / "t.txt", format_trials(trials))


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_unknown_flag_is_usage_error(separated):
    s, t = separated
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--scores", str(s), "--trials", str(t), "--bogus"])
    assert exc.value.code == 2


def test_fuse_needs_two(separated):
    with pytest.raises(SystemExit) as exc:
        main(["fuse", str(separated[0]), "--out", "x"])
    assert exc.value.code == 2


def test_eval_separated(separated, capsys, tmp_path):
    s, t = separated
    assert main(["eval", "--scores", str(s), "--trials", str(t), "--out", str(tmp_path / "r.txt"), "-q"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("EER 0.000%\n")
    assert "trials 4 target 2 nontarget 2" in out
    assert (tmp_path / "r.txt.cfg").exists()


def test_fuse_idempotent_eval(separated, capsys, tmp_path):
    s, t = separated
    main(["eval", "--scores", str(s), "--trials", str(t), "-q"])
    single = capsys.readouterr().out
    fused = tmp_path / "f.scores"
    assert main(["fuse", str(s), str(s), "--out", str(fused), "-q"]) == 0
    assert load_scores(fused).rows == load_scores(s).rows
    assert (tmp_path / "f.scores.cfg").exists()
    capsys.readouterr()
    main(["eval", "--scores", str(fused), "--trials", str(t), "-q"])
    assert capsys.readouterr().out == single


def test_pipeline_error_exit_1(tmp_path, capsys):
    bad = write(tmp_path / "bad.scores", "a 1 0.5\na 2 NaN\n")
    t = write(tmp_path / "t.txt", "a 1 target\na 2 nontarget\n")
    assert main(["eval", "--scores", str(bad), "--trials", str(t), "-q"]) == 1
    err = capsys.readouterr().err
    assert "bad.scores:2" in err


def test_missing_file_exit_1(tmp_path):
    assert main(["eval", "--scores", str(tmp_path / "none"), "--trials", str(tmp_path / "none"), "-q"]) == 1


def test_bad_config_key_exit_1(separated, tmp_path):
    s, t = separated
    cfg = write(tmp_path / "c.cfg", "nonsense: int = 1\n")
    assert main(["eval", "--scores", str(s), "--trials", str(t), "--config", str(cfg), "-q"]) == 1
    assert main(["eval", "--scores", str(s), "--trials", str(t), "--set", "nonsense=1", "-q"]) == 1


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_toy_corpus_deterministic(tmp_path):
    args = ["--seed", "7", "--n-speakers", "3", "--train-utts", "2", "--test-utts", "2", "-q"]
    assert main(["make-toy-corpus", "--out", str(tmp_path / "a"), *args]) == 0
    assert main(["make-toy-corpus", "--out", str(tmp_path / "b"), *args]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert (tmp_path / "a" / "run.cfg").exists() and (tmp_path / "a" / "toy.cfg").exists()


def test_tiny_pipeline(tmp_path, capsys):
    """train -> finetune -> embed -> score -> eval on a minute corpus (wiring only)."""
    c = tmp_path / "c"
    main(["make-toy-corpus", "--out", str(c), "--n-speakers", "3", "--train-utts", "2", "--test-utts", "2", "-q"])
    tiny = ["--set", "channels=32", "--set", "embed_dim=8", "--set", "attention_channels=8",
            "--set", "batch_size=4", "--set", "crop_seconds=0.5", "--set", "log_every=0", "-q"]
    src = c / "source"
    assert main(["train", "--manifest", str(src / "train.lst"), "--out", str(tmp_path / "m.ckpt"),
                 "--max-steps", "2", *tiny]) == 0
    assert (tmp_path / "m.ckpt.cfg").exists()
    assert main(["train", "--manifest", str(src / "train.lst"), "--out", str(tmp_path / "m2.ckpt"),
                 "--resume", str(tmp_path / "m.ckpt"), "--max-steps", "1", *tiny]) == 0
    assert "trained 3 steps" in capsys.readouterr().out
    assert main(["finetune", "--source", str(tmp_path / "m.ckpt"), "--manifest", str(c / "target" / "train.lst"),
                 "--out", str(tmp_path / "ft.ckpt"), "--mode", "vanilla", "--max-steps", "2", "-q"]) == 0
    ck = str(tmp_path / "ft.ckpt")
    assert main(["embed", "--checkpoint", ck, "--manifest", str(src / "enroll.lst"), "--enroll",
                 "--out", str(tmp_path / "enroll.emb"), "-q"]) == 0
    assert all("#" in k for k in load_embeddings(tmp_path / "enroll.emb").entries)
    assert main(["embed", "--checkpoint", ck, "--manifest", str(src / "test.lst"),
                 "--out", str(tmp_path / "test.emb"), "-q"]) == 0
    assert main(["score", "--trials", str(src / "trials.txt"), "--enroll-manifest", str(src / "enroll.lst"),
                 "--enroll-emb", str(tmp_path / "enroll.emb"), "--test-emb", str(tmp_path / "test.emb"),
                 "--out", str(tmp_path / "s.scores"), "-q"]) == 0
    capsys.readouterr()
    assert main(["eval", "--scores", str(tmp_path / "s.scores"), "--trials", str(src / "trials.txt"),
                 "--det", str(tmp_path / "det.txt"), "-q"]) == 0
    assert capsys.readouterr().out.startswith("EER ")
    assert (tmp_path / "det.txt").read_text().startswith("# threshold far frr")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "spkver", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "make-toy-corpus" in r.stdout
