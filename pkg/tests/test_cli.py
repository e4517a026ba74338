import subprocess
import sys

import numpy as np
import pytest

from maresu.cli import main
from maresu.pnm import read_labels, write_pgm
from maresu.segnet import ImageTensor


@pytest.fixture
def weights(tmp_path):
    path = tmp_path / "w.maru"
    assert main(["init-weights", "--out", str(path), "--seed", "2", "--widths", "4,8,8,8", "--depths", "1,1,1,1",
                 "--gamma", "0.5"]) == 0
    return path


@pytest.fixture
def rgb(tmp_path):
    path = tmp_path / "in.ppm"
    write_pgm(ImageTensor(np.random.default_rng(0).uniform(size=(32, 32, 3))), path)
    return path


def test_verify_ok(capsys):
    assert main(["verify", "--seed", "3", "--instances", "10"]) == 0
    out = capsys.readouterr().out
    assert "5/5 suites passed" in out


def test_verify_fault_injection(capsys):
    assert main(["verify", "--seed", "3", "--instances", "5", "--no-guard"]) == 1
    assert "replay seeds: 3" in capsys.readouterr().out


def test_gradcheck(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    assert capsys.readouterr().out.count("[pass]") == 4


def test_gradcheck_threshold_failure():
    assert main(["gradcheck", "--threshold", "1e-14"]) == 1


def test_bench(tmp_path, capsys):
    out = tmp_path / "b.csv"
    args = ["bench", "--sizes", "32,64,128", "--dk", "4", "--dv", "4", "--softmax-max-n", "64", "--out", str(out)]
    assert main(args) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,n,d_k,d_v,wall_ns,flops,peak_aux_floats"
    assert sum(ln.startswith("softmax,") for ln in lines) == 2
    assert sum(ln.startswith("lam,") for ln in lines) == 3
    assert lines[-2].startswith("slope,softmax,") and lines[-1].startswith("slope,lam,")


def test_bench_unwritable(tmp_path):
    assert main(["bench", "--sizes", "32,64", "--out", str(tmp_path / "no" / "b.csv")]) == 3


def test_bench_bad_sizes():
    assert main(["bench", "--sizes", "64,32"]) == 2


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--sizes", "a,b"])
    assert exc.value.code == 2


def test_forward_deterministic(weights, rgb, tmp_path):
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    assert main(["forward", "--weights", str(weights), "--image", str(rgb), "--out", str(a)]) == 0
    assert main(["forward", "--weights", str(weights), "--image", str(rgb), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    labels = read_labels(a)
    assert labels.shape == (32, 32) and labels.max() < 6


def test_init_weights_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["init-weights", "--out", str(tmp_path / name), "--seed", "9"]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_forward_bad_image(weights, tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P7\n1 1\n255\n\0")
    assert main(["forward", "--weights", str(weights), "--image", str(bad), "--out", str(tmp_path / "o")]) == 3


def test_forward_indivisible(weights, tmp_path, capsys):
    img = tmp_path / "odd.ppm"
    write_pgm(ImageTensor(np.zeros((30, 32, 3))), img)
    assert main(["forward", "--weights", str(weights), "--image", str(img), "--out", str(tmp_path / "o")]) == 3
    assert "pad" in capsys.readouterr().err


def test_forward_corrupt_weights(tmp_path, rgb):
    w = tmp_path / "w"
    w.write_bytes(b"XXXX0000")
    assert main(["forward", "--weights", str(w), "--image", str(rgb), "--out", str(tmp_path / "o")]) == 3


def test_metrics_perfect(tmp_path, capsys):
    labels = np.random.default_rng(1).integers(0, 3, size=(8, 8))
    p = tmp_path / "p.pgm"
    write_pgm(labels, p)
    csv_path = tmp_path / "m.csv"
    assert main(["metrics", "--pred", str(p), "--truth", str(p), "-k", "3", "--csv", str(csv_path)]) == 0
    out = capsys.readouterr().out
    for name in ("OA", "mean F1", "mIoU", "kappa"):
        assert any(line.startswith(name + " ") and line.endswith("1.000000") for line in out.splitlines()), name
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "metric,value"
    assert "OA,1.0" in rows


def test_metrics_ignore_and_range(tmp_path):
    truth = np.array([[0, 1], [255, 1]])
    pred = np.array([[0, 1], [7, 1]])
    t, p = tmp_path / "t.pgm", tmp_path / "p.pgm"
    write_pgm(truth, t)
    write_pgm(pred, p)
    assert main(["metrics", "--pred", str(p), "--truth", str(t), "-k", "2", "--ignore-label", "255"]) == 0
    assert main(["metrics", "--pred", str(p), "--truth", str(t), "-k", "2"]) == 3


def test_ztest(capsys):
    assert main(["ztest", "0.8672", "1.9586e-6", "0.8586", "2.0706e-6"]) == 0
    out = capsys.readouterr().out
    assert "z = 4.284" in out and "significant" in out
    assert main(["ztest", "0.5", "0", "0.4", "0"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "maresu", "ztest", "0.8848", "1.7224e-6", "0.8801", "1.7861e-6"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "2.509" in res.stdout
