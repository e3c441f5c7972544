import csv
import json
import subprocess
import sys

import pytest

from rotsym import io
from rotsym.cli import EXIT_CHECK, EXIT_INPUT, EXIT_OK, EXIT_PAIRING, main
from rotsym.projection import CameraIntrinsics, project_point
from rotsym.scene import Scene


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def smoke(tmp_path):
    gt, pred = tmp_path / "gt.json", tmp_path / "pred.json"
    assert run("synth", "smoke", "--out", gt, "--pred-out", pred, "--workers", 1) == EXIT_OK
    return gt, pred


class TestSynth:
    def test_byte_identical_across_workers(self, smoke, tmp_path):
        gt, pred = smoke
        gt4, pred4 = tmp_path / "gt4.json", tmp_path / "pred4.json"
        assert run("synth", "smoke", "--out", gt4, "--pred-out", pred4, "--workers", 4) == EXIT_OK
        assert gt.read_bytes() == gt4.read_bytes()
        assert pred.read_bytes() == pred4.read_bytes()

    def test_gt_only(self, tmp_path):
        out = tmp_path / "gt.json"
        assert run("synth", "smoke", "--out", out) == EXIT_OK
        scenes = io.read_scenes(out, strict=True)
        assert len(scenes) == 10
        assert all(p.scores is None for s in scenes for p in s.polygons)

    def test_noise_zero(self, tmp_path, capsys):
        gt, pred = tmp_path / "gt.json", tmp_path / "pred.json"
        assert run("synth", "smoke", "--out", gt, "--pred-out", pred, "--noise", "zero") == EXIT_OK
        capsys.readouterr()
        assert run("eval", gt, pred, "--f1") == EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert rep["center_ap"]["mean"] == rep["vertex_ap"]["mean"] == rep["max_f1"] == 1.0

    def test_strict_config(self, tmp_path):
        cfg = tmp_path / "c.synth"
        cfg.write_text(json.dumps({"synth": {"n_scenes": 1, "typo": 3}}))
        assert run("synth", cfg, "--out", tmp_path / "o.json") == EXIT_OK
        assert run("synth", cfg, "--out", tmp_path / "o.json", "--strict") == EXIT_INPUT

    @pytest.mark.parametrize("text", ["{not json", json.dumps({"synth": {"n_scenes": -1}}), "[1]"])
    def test_bad_config(self, tmp_path, text, capsys):
        cfg = tmp_path / "c.synth"
        cfg.write_text(text)
        assert run("synth", cfg, "--out", tmp_path / "o.json") == EXIT_INPUT
        assert "error:" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert run("synth", tmp_path / "none.synth", "--out", tmp_path / "o.json") == EXIT_INPUT


class TestEval:
    def test_deterministic_report(self, smoke, tmp_path):
        gt, pred = smoke
        outs = []
        for i, w in enumerate((1, 4, 1)):
            out = tmp_path / f"r{i}.json"
            assert run("eval", gt, pred, "--f1", "--workers", w, "--out", out) == EXIT_OK
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_config_echo(self, smoke, capsys):
        gt, pred = smoke
        run("eval", gt, pred)
        cfg = json.loads(capsys.readouterr().out)["config"]
        assert (cfg["tau"], cfg["dilation"], cfg["thresholds"], cfg["reg_weight"], cfg["default_focal"]) == (
            0.025, 5, 100, 10, 1000,
        )

    def test_pairing_error(self, smoke, tmp_path):
        gt, _ = smoke
        other = tmp_path / "other.json"
        io.write_scenes([Scene("zzz", 10, 10)], other)
        assert run("eval", gt, other) == EXIT_PAIRING

    def test_malformed_input(self, smoke, tmp_path):
        gt, _ = smoke
        bad = tmp_path / "bad.json"
        bad.write_text('{"format_version": 9, "scenes": []}')
        assert run("eval", gt, bad) == EXIT_INPUT


class TestFit:
    def test_refits_synthetic_truth(self, tmp_path, capsys):
        gt = tmp_path / "gt.json"
        run("synth", "smoke", "--out", gt)
        out = tmp_path / "fitted.json"
        capsys.readouterr()
        assert run("fit", gt, "--out", out) == EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert rep["attempted"] > 0 and rep["failed"] == 0
        assert sum(e["rms_reprojection"] < 1e-6 for e in rep["fits"]) >= 0.9 * rep["attempted"]
        fitted = io.read_scenes(out, strict=True)
        assert sum(len(s.polygons) for s in fitted) == rep["attempted"]

    def test_group_filter(self, tmp_path):
        gt, report = tmp_path / "gt.json", tmp_path / "rep.json"
        run("synth", "smoke", "--out", gt)
        assert run("fit", gt, "--group", "C4", "--report", report) == EXIT_OK
        assert {e["group"] for e in json.loads(report.read_text())["fits"]} <= {"C4"}


class TestGrid:
    def test_csv(self, tmp_path):
        out = tmp_path / "g.csv"
        assert run("grid", "--nx", 3, "--ny", 2, "--depths", "1,2.5", "--width", 640, "--height", 480,
                   "--f", 500, "--out", out) == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 3 * 2 * 2
        K = CameraIntrinsics(500, 320, 240)
        for r in rows:
            u, v = project_point((float(r["x"]), float(r["y"]), float(r["z"])), K)
            assert (float(r["u"]), float(r["v"])) == (u, v)
            assert int(r["in_bounds"]) == int(0 <= u < 640 and 0 <= v < 480)

    @pytest.mark.parametrize("args", [["--nx", "0"], ["--depths", "2,1"], ["--f", "-3"]])
    def test_invalid(self, args, tmp_path):
        assert run("grid", *args, "--out", tmp_path / "g.csv") == EXIT_INPUT


class TestCheck:
    def test_passes(self, capsys):
        assert run("check", "--n", 25) == EXIT_OK
        assert "0 failure(s)" in capsys.readouterr().out

    def test_empty(self):
        assert run("check", "--n", 0) == EXIT_OK

    def test_fault_injection(self, monkeypatch, capsys):
        import rotsym.fit

        real = rotsym.fit.analytic_jacobian
        monkeypatch.setattr(rotsym.fit, "analytic_jacobian", lambda p, K: 1.001 * real(p, K))
        assert run("check", "--n", 5) == EXIT_CHECK
        assert "jacobian sample" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "rotsym", "check", "--n", "0"], capture_output=True, text=True)
        assert proc.returncode == 0 and "0 samples" in proc.stdout
