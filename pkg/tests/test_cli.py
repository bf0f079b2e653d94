import subprocess
import sys

import pytest

from srtr.cli import EXIT_CODES, main

SMALL = """\
preset = desk
model.d_model = 16
model.n_heads = 2
model.n_entities = 4
model.n_triplets = 6
model.d_align = 8
train.steps = 2
train.batch_size = 2
train.n_scenes = 6
data.grid_size = 4
data.raw_channels = 4
"""


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    return tmp_path, cfg


def test_gen_train_eval_round_trip(workspace, capsys):
    tmp, cfg = workspace
    data = tmp / "d.bin"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert (tmp / "d.bin.splits").is_file()
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp / "run"),
                 "--split", "train"]) == 0
    log = (tmp / "run" / "metrics.log").read_text().splitlines()
    assert len(log) == 2
    ckpt = tmp / "run" / "checkpoints" / "final.npz"
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--split", "val",
                 "--dump", str(tmp / "top.txt")]) == 0
    out = capsys.readouterr().out
    assert "graph constraint: off" in out and "predcls.R@20=" in out
    assert (tmp / "top.txt").read_text().startswith("scene 0")


def test_eval_missing_checkpoint_reports_load_error(workspace, capsys):
    tmp, _ = workspace
    code = main(["eval", "--ckpt", str(tmp / "nope.npz"), "--data", str(tmp / "d.bin")])
    assert code == EXIT_CODES["load"]
    assert "error category=load" in capsys.readouterr().err


def test_eval_refuses_mismatched_config(workspace, capsys):
    tmp, cfg = workspace
    data = tmp / "d.bin"
    main(["gen-data", "--config", str(cfg), "--out", str(data)])
    main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp / "run")])
    other = tmp / "other.cfg"
    other.write_text(SMALL + "loss.lambda_vla = 0.1\n")
    ckpt = str(tmp / "run" / "checkpoints" / "final.npz")
    code = main(["eval", "--ckpt", ckpt, "--data", str(data), "--config", str(other)])
    assert code == EXIT_CODES["contract"]
    assert main(["eval", "--ckpt", ckpt, "--data", str(data), "--config", str(other),
                 "--force", "--setting", "sgdet"]) == 0


def test_bad_config_line_is_reported(workspace, capsys):
    tmp, _ = workspace
    bad = tmp / "bad.cfg"
    bad.write_text("model.d_model = lots\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp / "x.bin")]) == EXIT_CODES["config"]
    assert "bad.cfg:1" in capsys.readouterr().err


def test_bad_flags_exit_2():
    proc = subprocess.run([sys.executable, "-m", "srtr", "train", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_gradcheck_exits_zero():
    proc = subprocess.run([sys.executable, "-m", "srtr", "gradcheck"], capture_output=True,
                          text=True, timeout=300)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "FAIL" not in proc.stdout and "passed (tolerance 0.0001)" in proc.stdout
