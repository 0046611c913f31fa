import json
from pathlib import Path

import numpy as np
import pytest

from fdsr import ops
from fdsr.cli import main
from fdsr.data.pnm import read_pgm16, read_ppm, write_pgm16, write_ppm
from fdsr.net import init_weights
from fdsr.weights_io import save_weights


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "4", "--hr-size", "32x32", "--test-ratio", "0.5", "--seed", "2", "--out", str(out)]) == 0
    return out


@pytest.fixture
def zero_head(tmp_path, tiny_config):
    w = init_weights(tiny_config, seed=0)
    for k, t in w.items():
        if k.startswith("msrb.out."):
            t.data[:] = 0.0
    p = tmp_path / "zero.fdsrw"
    save_weights(p, w, tiny_config)
    return p


class TestSynth:
    def test_empty(self, tmp_path):
        assert main(["synth", "--n", "0", "--out", str(tmp_path)]) == 0
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["samples"] == []

    def test_byte_identical(self, tmp_path):
        args = ["synth", "--n", "5", "--hr-size", "16x16", "--seed", "9"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
        assert a == b and len(a) == 5 * 3 + 2

    def test_layout(self, dataset):
        m = json.loads((dataset / "manifest.json").read_text())
        assert len(m["samples"]) == 4
        assert {s["split"] for s in m["samples"]} == {"train", "test"}
        first = sorted(p for p in dataset.iterdir() if p.is_dir())[0]
        assert read_ppm(first / "rgb.ppm").shape == (32, 32, 3)
        assert read_pgm16(first / "lr_depth.pgm").shape == (8, 8)

    def test_bad_size(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["synth", "--hr-size", "big", "--out", str(tmp_path)])


class TestTrain:
    def test_missing_manifest(self, tmp_path, capsys):
        assert main(["train", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err

    def test_short_run_records_ablation(self, dataset, tmp_path):
        rc = main(["train", "--manifest", str(dataset / "manifest.json"), "--out", str(tmp_path),
                   "--ablation", "no_hfl", "--max-steps", "2", "--val-split", "test",
                   "--set", "fdsr.base_channels=4", "--set", "fdsr.guide_channels=4",
                   "--set", "train.patch=16", "--set", "train.batch=1"])
        assert rc == 0
        report = json.loads((tmp_path / "train_report.json").read_text())
        assert report["ablation"] == "no_hfl" and report["iterations"] == 2
        assert "fdsr.ablation = no_hfl" in (tmp_path / "resolved_config.txt").read_text()
        assert (tmp_path / "weights.fdsrw").is_file() and (tmp_path / "weights.fdsrw.json").is_file()

    def test_bad_override(self, dataset, tmp_path):
        assert main(["train", "--manifest", str(dataset / "manifest.json"), "--out", str(tmp_path),
                     "--set", "train.nothing=1"]) == 1


class TestEval:
    def test_bicubic_baseline_repeatable(self, dataset, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["eval", "--manifest", str(dataset / "manifest.json"), "--baseline", "bicubic",
                         "--out", str(tmp_path / name)]) == 0
        a = (tmp_path / "a" / "metrics.json").read_text()
        assert a == (tmp_path / "b" / "metrics.json").read_text()
        d = json.loads(a)
        assert d["schema_version"] == 1 and d["split"] == "test" and d["method"] == "bicubic"
        assert d["aggregate"]["rmse_cm"] > 0
        assert "bicubic" in capsys.readouterr().out

    def test_zero_head_matches_bicubic(self, dataset, tmp_path, zero_head):
        man = str(dataset / "manifest.json")
        assert main(["eval", "--manifest", man, "--baseline", "bicubic", "--out", str(tmp_path / "b")]) == 0
        assert main(["eval", "--manifest", man, "--weights", str(zero_head), "--out", str(tmp_path / "f")]) == 0
        b = json.loads((tmp_path / "b" / "metrics.json").read_text())["aggregate"]
        f = json.loads((tmp_path / "f" / "metrics.json").read_text())["aggregate"]
        assert f["rmse_cm"] == pytest.approx(b["rmse_cm"], abs=1e-3)

    def test_needs_exactly_one_source(self, dataset, tmp_path):
        assert main(["eval", "--manifest", str(dataset / "manifest.json"), "--out", str(tmp_path)]) == 1


class TestInfer:
    def test_zero_head_is_bicubic(self, tmp_path, rng, zero_head):
        lr = rng.integers(1000, 4000, size=(6, 5)).astype(np.uint16)
        rgb = rng.integers(0, 256, size=(24, 20, 3)).astype(np.uint8)
        write_pgm16(tmp_path / "d.pgm", lr)
        write_ppm(tmp_path / "c.ppm", rgb)
        out = tmp_path / "o" / "hr.pgm"
        assert main(["infer", "--rgb", str(tmp_path / "c.ppm"), "--depth", str(tmp_path / "d.pgm"),
                     "--weights", str(zero_head), "--out", str(out), "--preview", str(tmp_path / "v.pgm")]) == 0
        hr = read_pgm16(out)
        assert hr.shape == (24, 20)
        expected = ops.bicubic_resize_array(lr.astype(np.float64), 24, 20)
        assert np.abs(hr.astype(float) - expected).max() <= 1.0
        assert (tmp_path / "v.pgm").is_file()

    def test_missing_input(self, tmp_path, zero_head):
        assert main(["infer", "--rgb", str(tmp_path / "x.ppm"), "--depth", str(tmp_path / "y.pgm"),
                     "--weights", str(zero_head), "--out", str(tmp_path / "o.pgm")]) == 1

    def test_size_mismatch(self, tmp_path, rng, zero_head):
        write_pgm16(tmp_path / "d.pgm", np.ones((6, 5), np.uint16))
        write_ppm(tmp_path / "c.ppm", np.zeros((20, 20, 3), np.uint8))
        assert main(["infer", "--rgb", str(tmp_path / "c.ppm"), "--depth", str(tmp_path / "d.pgm"),
                     "--weights", str(zero_head), "--out", str(tmp_path / "o.pgm")]) == 1


class TestFill:
    def test_hole_free_is_byte_identical(self, tmp_path, rng):
        d = rng.integers(1, 9000, size=(10, 12)).astype(np.uint16)
        write_pgm16(tmp_path / "d.pgm", d)
        write_ppm(tmp_path / "c.ppm", rng.integers(0, 256, size=(10, 12, 3)).astype(np.uint8))
        assert main(["fill", "--depth", str(tmp_path / "d.pgm"), "--rgb", str(tmp_path / "c.ppm"),
                     "--out", str(tmp_path / "f.pgm")]) == 0
        assert (tmp_path / "f.pgm").read_bytes() == (tmp_path / "d.pgm").read_bytes()

    def test_fills_holes(self, tmp_path, rng):
        d = np.full((10, 12), 1500, np.uint16)
        d[3:6, 4:8] = 0
        write_pgm16(tmp_path / "d.pgm", d)
        write_ppm(tmp_path / "c.ppm", np.full((10, 12, 3), 90, np.uint8))
        assert main(["fill", "--depth", str(tmp_path / "d.pgm"), "--rgb", str(tmp_path / "c.ppm"),
                     "--out", str(tmp_path / "f.pgm")]) == 0
        assert (read_pgm16(tmp_path / "f.pgm") == 1500).all()


def test_bench(tmp_path):
    assert main(["bench", "--set", "fdsr.base_channels=4", "--set", "fdsr.guide_channels=4",
                 "--size", "32x32", "--reps", "3", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "bench.json").read_text())
    assert len(d["times_ms"]) == 3 and d["median_ms"] > 0 and d["params"] > 0


class TestGradcheck:
    def test_clean_run(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path)]) == 0
        d = json.loads((tmp_path / "gradcheck.json").read_text())
        assert d["passed"] and len(d["results"]) >= 15
        assert "PASS conv2d" in capsys.readouterr().err

    def test_corruption_fails(self, tmp_path, capsys):
        assert main(["gradcheck", "--corrupt", "mul", "--out", str(tmp_path)]) == 1
        d = json.loads((tmp_path / "gradcheck.json").read_text())
        failed = {r["name"] for r in d["results"] if not r["passed"]}
        assert "mul" in failed and not d["passed"]
        assert "FAIL mul" in capsys.readouterr().err
