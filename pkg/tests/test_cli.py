import numpy as np
import pytest

from scgnet import tsr
from scgnet.cli import main, parse_scenes, read_pgm, write_pgm
from scgnet.config import RunConfig

TINY = "widths = 4,6,8\nnode_h = 2\nnode_w = 2\nn_classes = 3\nimage_size = 16\nnum_scenes = 8\neval_scenes = 4\nepochs = 2\neval_every = 1\n"


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    out = root / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return root, out


def test_train_outputs(trained, capsys):
    _, out = trained
    names = {p.name for p in out.iterdir()}
    assert {"checkpoint.scgc", "losses.csv", "metrics.csv", "metrics.txt", "losses.png", "metrics.png"} <= names
    assert (out / "losses.png").read_bytes()[:4] == b"\x89PNG"
    assert (out / "metrics.txt").read_text().startswith("epoch=2\noa=")


def test_train_resume(trained, tmp_path):
    root, out = trained
    more = tmp_path / "more"
    assert main(["train", "--config", str(root / "tiny.cfg"), "--resume", str(out / "checkpoint.scgc"),
                 "--epochs", "3", "--out", str(more)]) == 0
    assert len((more / "losses.csv").read_text().splitlines()) == 1 + 2


def test_eval(trained, tmp_path, capsys):
    _, out = trained
    ev = tmp_path / "ev"
    assert main(["eval", "--ckpt", str(out / "checkpoint.scgc"), "--scenes", "offset=500,count=5", "--out", str(ev), "--save-limit", "2"]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("oa=")
    assert (ev / "metrics.txt").read_text() == printed
    assert (ev / "metrics.csv").read_text().startswith("class,f1\n")
    for name in ("scene_500.ppm", "scene_501.ppm", "scene_500_pred.pgm", "predictions.png", "confusion.png"):
        assert (ev / name).exists(), name
    assert not (ev / "scene_502.ppm").exists()
    ppm = (ev / "scene_500.ppm").read_bytes()
    assert ppm.startswith(b"P6\n16 16\n255\n") and len(ppm) == len(b"P6\n16 16\n255\n") + 16 * 16 * 3
    pgm = (ev / "scene_500_pred.pgm").read_bytes()
    assert pgm.startswith(b"P5\n16 16\n2\n")
    labels, maxval = read_pgm(str(ev / "scene_500_pred.pgm"))
    assert maxval == 2 and labels.shape == (16, 16) and labels.max() <= 2


def test_export_graph(trained, tmp_path, capsys):
    _, out = trained
    g = tmp_path / "g"
    assert main(["export-graph", "--ckpt", str(out / "checkpoint.scgc"), "--scene", "3", "--out", str(g)]) == 0
    a_raw, a_norm = tsr.load(str(g / "a_raw.tsr")), tsr.load(str(g / "a_norm.tsr"))
    assert a_raw.shape == a_norm.shape == (4, 4)
    assert np.array_equal(a_raw, a_raw.T) and np.array_equal(a_norm, a_norm.T)
    summary = (g / "summary.txt").read_text().splitlines()
    assert summary[0] == "n=4"
    gamma = float(summary[1].split("=")[1])
    assert gamma >= 1.0
    density = float(summary[2].split("=")[1])
    assert density == pytest.approx((a_raw > 1e-6).mean())
    assert (g / "adjacency.png").exists()


def test_grad_check_command(capsys):
    assert main(["grad-check", "--scope", "kl_loss"]) == 0
    out = capsys.readouterr().out
    assert "PASS kl_loss" in out and "1/1 scopes passed" in out


def test_grad_check_failure_exit_code(capsys):
    assert main(["grad-check", "--scope", "exp", "--tol", "0"]) == 1
    assert main(["grad-check", "--scope", "bogus"]) == 2


def test_missing_checkpoint_is_reported(tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "nope.scgc")]) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_config_is_reported(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_parse_scenes():
    cfg = RunConfig()
    spec, idx = parse_scenes("", cfg)
    assert idx[0] == cfg.train.eval_offset and len(idx) == cfg.train.eval_scenes
    spec, idx = parse_scenes("offset=3, count=2, noise=0, max_shapes=1", cfg)
    assert list(idx) == [3, 4] and spec.noise == 0 and spec.max_shapes == 1
    with pytest.raises(ValueError):
        parse_scenes("colour=1", cfg)


def test_pgm_round_trip(tmp_path):
    labels = np.arange(12).reshape(3, 4) % 4
    write_pgm(str(tmp_path / "x.pgm"), labels, 3)
    back, maxval = read_pgm(str(tmp_path / "x.pgm"))
    assert maxval == 3
    np.testing.assert_array_equal(back, labels)
