import dataclasses
import math
import warnings

import numpy as np
import pytest

from statcom4t4d import scenario
from statcom4t4d.errors import ChannelNotFoundError, ConfigError, DivergenceError

SHORT = ["sim.duration=0.05"]


def exp_cfg(*overrides):
    return scenario.load_golden("exp-steady").config.with_overrides([*SHORT, *overrides])


class TestRun:
    def test_channels_and_rate(self):
        rec = scenario.run(exp_cfg())
        assert len(rec) == 5000
        assert rec.sample_rate == pytest.approx(1e5)
        for name, unit, _ in scenario.CHANNELS:
            assert name in rec.channels and rec.units[name] == unit
        assert rec.module_channels == ["v_sm1", "v_sm2", "v_sm3"]

    def test_deterministic_digest(self):
        cfg = exp_cfg("modules.v_init_jitter=0.03", "seed=7")
        assert scenario.run(cfg).digest() == scenario.run(cfg).digest()

    def test_seed_matters(self):
        a = scenario.run(exp_cfg("modules.v_init_jitter=0.03", "seed=1"))
        b = scenario.run(exp_cfg("modules.v_init_jitter=0.03", "seed=2"))
        assert a.digest() != b.digest()

    def test_starts_at_setpoint(self):
        cfg = exp_cfg()
        rec = scenario.run(cfg)
        assert rec["v_sm1"][0] == pytest.approx(scenario.setpoint(cfg), rel=1e-3)

    def test_meta(self):
        rec = scenario.run(exp_cfg())
        m = rec.meta
        assert m["complementarity_violations"] == 0
        assert m["energy_residual_rel"] < 1e-3
        assert set(m["gains"]) == {"kp_i", "ki_i", "kr_i", "kp_v", "ki_v"}

    def test_event_exactness(self):
        cfg = exp_cfg("sim.duration=0.03", "sim.record_every=1",
                      "events=[{time: 0.01005, action: set_vcap, value: 50.0, module: 0},"
                      " {time: 0.0200037, action: grid_scale, value: 0.5}]")
        rec = scenario.run(cfg)
        dv = np.abs(np.diff(rec["v_sm1"]))
        # the jump lands on the sample at the event step and nowhere else
        assert int(np.argmax(dv)) + 1 == 10050
        assert np.sort(dv)[-2] < 0.05 * dv.max()
        ideal = 100.0 * np.sin(2 * math.pi * 60.0 * rec.t)
        assert np.allclose(rec["v_g"][:20003], ideal[:20003])
        assert np.allclose(rec["v_g"][20003:], 0.5 * ideal[20003:])
        assert [e[0] for e in rec.events] == [pytest.approx(0.01005), pytest.approx(0.020003)]

    def test_event_order_independent(self):
        a = exp_cfg("events=[{time: 0.02, action: set_i_ref, value: 3.0},"
                    " {time: 0.01, action: set_a_m, value: 0.7}]")
        b = exp_cfg("events=[{time: 0.01, action: set_a_m, value: 0.7},"
                    " {time: 0.02, action: set_i_ref, value: 3.0}]")
        assert scenario.run(a).digest() == scenario.run(b).digest()

    def test_divergence(self):
        with pytest.raises(DivergenceError) as exc:
            scenario.run(exp_cfg("grid.r_g=1e5"))
        snap = exc.value.snapshot
        assert {"step", "t", "cap_voltages", "controller"} <= set(snap)
        assert all(math.isfinite(v) for v in snap["cap_voltages"])

    def test_saturation_warning(self):
        cfg = scenario.load_golden("exp-steady").config.with_overrides(
            ["controller.a_m_target=0.98", "sim.duration=0.4",
             "events=[{time: 0.1, action: set_i_ref, value: 6.0}]"])
        with pytest.warns(scenario.SaturationWarning):
            rec = scenario.run(cfg)
        assert rec.meta["max_saturated_cycles"] > 1 and rec.meta["warnings"]

    def test_no_warning_nominal(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", scenario.SaturationWarning)
            scenario.run(exp_cfg())

    def test_too_short(self):
        with pytest.raises(ConfigError):
            scenario.run(exp_cfg("sim.duration=5e-6"))


class TestSetpointAndGains:
    def test_setpoint_from_config(self):
        cfg = scenario.load_golden("exp-steady").config
        assert scenario.setpoint(cfg) == pytest.approx(40.26, abs=0.01)
        assert scenario.setpoint(cfg, a_m_target=0.4) == pytest.approx(2 * 40.2608, rel=1e-4)

    def test_explicit_gains_kept(self):
        cfg = scenario.load_golden("exp-amref").config
        cp = scenario.controller_params(cfg)
        assert cp.kp_v == 1.8 and cp.ki_v == 1.1

    def test_auto_gains(self):
        cfg = scenario.load_golden("exp-steady").config
        cp = scenario.controller_params(cfg)
        v = scenario.setpoint(cfg)
        assert cp.kp_i == pytest.approx(3.58e-3 * 2 * math.pi * 1e3 / (3 * v))
        assert cp.kr_i == pytest.approx(1500 * cp.kp_i)
        assert abs(cp.kp_v) > 0 and cp.ki_v > 0


@pytest.fixture(scope="module")
def rec():
    return scenario.run(scenario.load_golden("exp-steady").config.with_overrides(
        ["sim.duration=0.3"]))


class TestMetrics:
    def test_kinds(self, rec):
        f0 = 60.0
        ev = scenario.evaluate_metric
        assert ev(rec, {"kind": "mean", "channel": "a_hat"}, f0) == pytest.approx(0.8, abs=0.03)
        assert ev(rec, {"kind": "level_count"}, f0) == 7
        assert ev(rec, {"kind": "thd", "channel": "i_o"}, f0) < 0.2
        assert ev(rec, {"kind": "meta", "key": "complementarity_violations"}, f0) == 0
        phase = ev(rec, {"kind": "phase", "channel": "i_o", "reference": "v_g"}, f0)
        assert phase == pytest.approx(-90.0, abs=3.0)
        diff = ev(rec, {"kind": "mean", "channel": "i_o-i_ref"}, f0)
        assert abs(diff) < 0.05

    def test_unknown_channel(self, rec):
        with pytest.raises(ChannelNotFoundError):
            scenario.evaluate_metric(rec, {"kind": "mean", "channel": "nope"}, 60.0)

    def test_unknown_kind(self, rec):
        with pytest.raises((ConfigError, ValueError)):
            scenario.evaluate_metric(rec, {"kind": "magic"}, 60.0)


class TestValidate:
    def test_empty(self):
        report = scenario.validate([])
        assert report.ok and report.rows == [] and not report.errors

    def test_tampered_gain_flags_metric(self):
        g = scenario.load_golden("exp-reversal")
        bad = dataclasses.replace(g, config=g.config.with_overrides(["controller.kp_i=0.0005"]))
        report = scenario.validate([bad])
        failed = {r.metric for r in report.rows if not r.passed}
        assert not report.ok
        assert "retrack_s" in failed
        assert "complementarity_violations" not in failed

    def test_errors_are_content(self):
        g = scenario.load_golden("exp-steady")
        bad = dataclasses.replace(g, config=g.config.with_overrides(["grid.r_g=1e5"]))
        report = scenario.validate([bad])
        assert not report.ok and "DivergenceError" in report.errors["exp-steady"]
        assert "ERROR" in report.table()

    def test_resolve_config(self, tmp_path):
        cfg = scenario.resolve_config("exp-steady")
        p = tmp_path / "x.yaml"
        cfg.save(p)
        assert scenario.resolve_config(str(p)) == cfg
