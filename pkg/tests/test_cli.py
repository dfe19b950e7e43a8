import os

import numpy as np

from hybridseg.cli import main, read_config_file
from hybridseg.evalio import hdt_read, hdt_write


def _tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_gen_data_is_byte_identical(tmp_path):
    args = ["gen-data", "--n", "5", "--size", "16", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert set(a) == {"images.hdt", "masks.hdt", "index.json", "run.log"}
    assert a == b


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["gen-data"]) == 1
    assert main(["gen-data", "--out", str(tmp_path), "--n", "0"]) == 1
    assert main(["pretrain", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "c")]) == 1
    assert main(["nonsense"]) == 1
    assert main(["bench-bitops", "--m", "0"]) == 1
    assert "error" in capsys.readouterr().err


def test_runtime_error_exits_2(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    main(["gen-data", "--n", "2", "--size", "16", "--out", str(tmp_path / "d")])
    assert main(["eval", "--ckpt", str(bad), "--data", str(tmp_path / "d"), "--out", str(tmp_path / "r.csv")]) == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# data settings\nn = 3\nsize = 16\nseed = 9\nout = %s\n" % (tmp_path / "x"))
    assert read_config_file(cfg)["n"] == "3"
    assert main(["gen-data", "--config", str(cfg)]) == 0
    assert len(hdt_read(tmp_path / "x" / "images.hdt")) == 3
    assert main(["gen-data", "--config", str(cfg), "--n", "4", "--out", str(tmp_path / "y")]) == 0
    assert len(hdt_read(tmp_path / "y" / "images.hdt")) == 4
    cfg.write_text("bogus = 1\n")
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 1


def test_pipeline_commands(tmp_path):
    d, seg, ck = tmp_path / "data", tmp_path / "seg.ckpt", tmp_path / "hd.ckpt"
    assert main(["gen-data", "--n", "4", "--size", "16", "--out", str(d)]) == 0
    assert main(["pretrain", "--data", str(d), "--out", str(seg), "--iters", "2", "--batch", "2"]) == 0
    assert (tmp_path / "seg_loss.csv").read_text().startswith("iteration,pretrain_loss")
    assert (tmp_path / "seg.log").exists()
    assert main(["train", "--data", str(d), "--seg", str(seg), "--out", str(ck), "--iters", "1", "--batch", "2"]) == 0
    assert (tmp_path / "hd_loss.csv").exists()

    img = tmp_path / "img.hdt"
    hdt_write(img, hdt_read(d / "images.hdt")[0])
    out = tmp_path / "sample"
    assert main(["sample", "--ckpt", str(ck), "--image", str(img), "--out", str(out), "--steps", "3",
                 "--trajectory"]) == 0
    refined = hdt_read(out / "refined.hdt")
    assert refined.shape == (16, 16, 2) and refined.dtype == np.uint8
    assert (out / "prior_c0.pgm").exists() and (out / "refined_c1.pgm").exists()
    assert len([f for f in os.listdir(out / "trajectory") if f.endswith(".hdt")]) == 4
    assert main(["sample", "--ckpt", str(ck), "--image", str(img), "--out", str(out), "--steps", "11"]) == 1


def test_eval_on_untrained_refiner(tmp_path):
    d, seg = tmp_path / "data", tmp_path / "seg.ckpt"
    main(["gen-data", "--n", "3", "--size", "16", "--out", str(d)])
    assert main(["pretrain", "--data", str(d), "--out", str(seg), "--iters", "0"]) == 0
    report = tmp_path / "rep" / "m.csv"
    assert main(["eval", "--ckpt", str(seg), "--data", str(d), "--out", str(report), "--steps", "2"]) == 0
    lines = report.read_text().splitlines()
    assert lines[0].startswith("#") and lines[1].startswith("class,dice,hd95")
    assert any(line.startswith("refined:mean") for line in lines)


def test_bench_bitops(tmp_path, capsys):
    out = tmp_path / "bench.txt"
    assert main(["bench-bitops", "--m", "8", "--k", "70", "--n", "5", "--repeat", "1", "--out", str(out)]) == 0
    text = out.read_text()
    assert "bit_exact True" in text and "xnor_gemm" in text
    assert "speedup" in capsys.readouterr().out


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.strip()
