import dataclasses
import math
import re

import numpy as np
import pytest
import yaml

from statcom4t4d import cli
from statcom4t4d.record import TimeSeriesRecord


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    d = tmp_path / "out"
    monkeypatch.setenv(cli.OUTDIR_ENV, str(d))
    return d


def envelope_rows(text):
    rows = []
    for line in text.splitlines()[1:]:
        parts = line.split()
        rows.append((int(parts[0]), float(parts[-1])))
    return rows


class TestRun:
    def test_run_writes_outputs(self, outdir, capsys):
        assert cli.main(["run", "sim-steady", "--set", "sim.duration=0.2"]) == cli.EXIT_OK
        for name in ("config.yaml", "record.csv", "metrics.yaml", "metrics-spec.yaml",
                     "run-info.yaml"):
            assert (outdir / name).is_file()
        metrics = yaml.safe_load((outdir / "metrics.yaml").read_text())
        assert 0.0 < metrics["current_thd_h50"] < 0.2
        cfg = yaml.safe_load((outdir / "config.yaml").read_text())
        assert cfg["sim"]["duration"] == 0.2

    def test_analyze_matches_inline(self, outdir, tmp_path):
        assert cli.main(["run", "exp-steady", "--set", "sim.duration=0.25"]) == 0
        out = tmp_path / "again.yaml"
        rc = cli.main(["analyze", str(outdir / "record.csv"), "--spec",
                       str(outdir / "metrics-spec.yaml"), "--output", str(out)])
        assert rc == 0
        assert out.read_bytes() == (outdir / "metrics.yaml").read_bytes()

    def test_analyze_default_spec_matches(self, outdir, capsys):
        assert cli.main(["run", "exp-steady", "--set", "sim.duration=0.25"]) == 0
        capsys.readouterr()
        assert cli.main(["analyze", str(outdir / "record.csv")]) == 0
        assert capsys.readouterr().out == (outdir / "metrics.yaml").read_text()

    def test_pre_step_regime(self, outdir):
        args = ["run", "exp-steady", "--set", "controller.a_m_target=0.5",
                "--set", "sim.duration=0.5"]
        assert cli.main(args) == 0
        m = yaml.safe_load((outdir / "metrics.yaml").read_text())
        info = yaml.safe_load((outdir / "run-info.yaml").read_text())
        assert m["a_hat_mean"] == pytest.approx(0.5, abs=0.02)
        assert m["vsm_mean"] == pytest.approx(info["setpoint"], rel=0.05)

    def test_outdir_flag(self, tmp_path):
        d = tmp_path / "explicit"
        assert cli.main(["run", "exp-steady", "--set", "sim.duration=0.05", "-o", str(d)]) == 0
        assert (d / "record.csv").is_file()


class TestExitCodes:
    def test_missing_config(self, outdir, capsys):
        assert cli.main(["run", "no/such/file.yaml"]) == cli.EXIT_USAGE
        assert "hint" in capsys.readouterr().err

    def test_bad_arguments(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["run"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_config_error(self, outdir, capsys):
        assert cli.main(["run", "exp-steady", "--set", "modules.n=0"]) == cli.EXIT_CONFIG
        assert "modules.n" in capsys.readouterr().err

    def test_divergence_snapshot(self, outdir):
        rc = cli.main(["run", "exp-steady", "--set", "grid.r_g=1e5",
                       "--set", "sim.duration=0.01"])
        assert rc == cli.EXIT_DIVERGENCE
        snap = yaml.safe_load((outdir / "snapshot.yaml").read_text())
        assert snap["step"] >= 0

    def test_bad_csv(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("t [s],i_o [A]\n0,1\n1e-5,zz\n")
        assert cli.main(["analyze", str(p)]) == cli.EXIT_ANALYSIS
        assert "line 3" in capsys.readouterr().err

    def test_missing_channel(self, tmp_path, capsys):
        t = np.arange(6000) / 36e3
        TimeSeriesRecord(t, {"x": np.sin(2 * math.pi * 60 * t)}).to_csv(tmp_path / "r.csv")
        rc = cli.main(["analyze", str(tmp_path / "r.csv"), "--spec", str(self._spec(tmp_path))])
        assert rc == cli.EXIT_ANALYSIS
        assert "i_o" in capsys.readouterr().err

    @staticmethod
    def _spec(tmp_path):
        p = tmp_path / "spec.yaml"
        p.write_text("thd: {kind: thd, channel: i_o}\n")
        return p

    def test_validate_codes(self, monkeypatch, capsys):
        assert cli.main(["validate", "exp-steady"]) == cli.EXIT_OK
        real = cli.scenario.load_golden

        def impossible(name):
            g = real(name)
            e = dataclasses.replace(g.expectations[0], max=-1.0, min=-2.0)
            return dataclasses.replace(g, expectations=[e])

        monkeypatch.setattr(cli.scenario, "load_golden", impossible)
        assert cli.main(["validate", "exp-steady"]) == cli.EXIT_FAILED
        assert "FAIL" in capsys.readouterr().out


class TestAnalyzeSquareWave:
    def test_square_wave_csv(self, tmp_path, capsys):
        per_cycle = 6000
        n = 10 * per_cycle
        t = np.arange(n) / (60.0 * per_cycle)
        x = np.sign(np.sin(2 * math.pi * (np.arange(n) + 0.5) / per_cycle))
        TimeSeriesRecord(t, {"x": x}, {"x": "V"}).to_csv(tmp_path / "sq.csv")
        rc = cli.main(["analyze", str(tmp_path / "sq.csv"),
                       "--metric", "thd_full={kind: thd, channel: x, harmonics: null, cycles: 10}",
                       "--metric", "thd_h50={kind: thd, channel: x, cycles: 10}",
                       "--spec", str(self._empty(tmp_path))])
        assert rc == 0
        m = yaml.safe_load(capsys.readouterr().out)
        assert m["thd_full"] == pytest.approx(0.483, abs=2e-3)
        assert m["thd_h50"] == pytest.approx(0.4730, abs=2e-3)

    @staticmethod
    def _empty(tmp_path):
        p = tmp_path / "empty.yaml"
        p.write_text("{}\n")
        return p


class TestEnvelope:
    def test_default(self, capsys):
        assert cli.main(["envelope"]) == 0
        (row,) = envelope_rows(capsys.readouterr().out)
        assert row == (10, 530.52)

    def test_sweep_monotone(self, capsys):
        assert cli.main(["envelope", "--n-min", "8", "--n-max", "12"]) == 0
        rows = envelope_rows(capsys.readouterr().out)
        assert [n for n, _ in rows] == [8, 9, 10, 11, 12]
        values = [v for _, v in rows]
        assert all(b > a for a, b in zip(values[2:], values[3:]))
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_zero_headroom(self, capsys):
        assert cli.main(["envelope", "--v-sm-max", "1250"]) == 0
        (row,) = envelope_rows(capsys.readouterr().out)
        assert row[1] == 0.0

    def test_needs_v_sm_max(self, capsys):
        assert cli.main(["envelope", "exp-steady"]) == cli.EXIT_CONFIG


class TestListGoldens:
    def test_lists_all(self, capsys):
        assert cli.main(["list-goldens"]) == 0
        out = capsys.readouterr().out
        names = [re.split(r"\s+", line)[0] for line in out.splitlines()]
        assert names == list(cli.scenario.GOLDEN_NAMES)
