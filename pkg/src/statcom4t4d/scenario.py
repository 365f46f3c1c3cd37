"""Deterministic scenario execution, metrics and the golden scenario library."""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import _kernels as K
from . import analysis
from .circuit import GridParams, ModuleParams
from .config import ScenarioConfig
from .control import (ControllerParams, design_inner_gains, design_outer_gains,
                      equilibrium_state, vsm_setpoint_estimate)
from .errors import ConfigError, DivergenceError
from .record import TimeSeriesRecord

EVENT_CODES = {
    "set_i_ref": K.EV_SET_IREF,
    "set_a_m": K.EV_SET_AM,
    "toggle_leading": K.EV_TOGGLE_LEADING,
    "grid_scale": K.EV_GRID_SCALE,
    "set_vcap": K.EV_SET_VCAP,
}

CHANNELS = [
    # (name, unit, kernel column)
    ("v_g", "V", 1), ("i_o", "A", 2), ("i_ref", "A", 3), ("v_arm", "V", 4),
    ("v_arm_sq", "V^2", 11), ("v_m", "1", 5), ("a_hat", "1", 6), ("eps", "rad", 7),
    ("sat", "1", 8), ("level", "1", 9), ("theta", "rad", 10),
]


class SaturationWarning(UserWarning):
    """Modulation stayed clamped for more than one grid cycle."""


def grid_params(cfg: ScenarioConfig) -> GridParams:
    g = cfg.grid
    return GridParams(g.v_amp, g.freq, g.l_g, g.r_g)


def module_params(cfg: ScenarioConfig) -> ModuleParams:
    m = cfg.modules
    return ModuleParams(m.capacitance, 0.0 if not isinstance(m.v_init, float) else m.v_init,
                        m.diode_drop, m.device_resistance, m.parallel_loop_resistance)


def setpoint(cfg: ScenarioConfig, i_ref_amp=None, leading=None, a_m_target=None) -> float:
    """Module voltage predicted by the steady-state model for this config."""
    c = cfg.controller
    return vsm_setpoint_estimate(
        grid_params(cfg), c.i_ref_amp if i_ref_amp is None else i_ref_amp,
        c.leading if leading is None else leading,
        c.a_m_target if a_m_target is None else a_m_target, cfg.modules.n)


def controller_params(cfg: ScenarioConfig) -> ControllerParams:
    """Resolve automatic gains from the initial operating point."""
    c, m = cfg.controller, cfg.modules
    grid = grid_params(cfg)
    v_sm = setpoint(cfg)
    kp_i, _, kr_i = design_inner_gains(grid, m.n, v_sm, c.f_bandwidth, c.resonant_ratio)
    kp_v, ki_v = design_outer_gains(grid, c.i_ref_amp, m.n, m.capacitance, v_sm,
                                    c.a_m_target, c.eps_max, c.f_lpf)
    ts = 1.0 / c.f_control
    wn = 2.0 * math.pi * c.pll_bandwidth
    return ControllerParams(
        ts=ts,
        kp_i=kp_i if c.kp_i is None else c.kp_i,
        ki_i=c.ki_i,
        kr_i=kr_i if c.kr_i is None else c.kr_i,
        kp_v=kp_v if c.kp_v is None else c.kp_v,
        ki_v=ki_v if c.ki_v is None else c.ki_v,
        outer_div=c.outer_div,
        alpha=2.0 * math.pi * c.f_lpf * ts,
        eps_max=c.eps_max,
        w_nom=grid.omega,
        pll_kp=2.0 * c.pll_damping * wn,
        pll_ki=wn * wn,
        sogi_k=c.sogi_k,
        ideal_pll=c.ideal_pll,
        w_bound=2.0 * math.pi * c.pll_bound,
        outer_on=c.outer_loop,
        eps_fixed=c.eps_fixed,
    )


def initial_conditions(cfg: ScenarioConfig):
    """(cap_voltages, capacitances) after applying the seeded tolerances."""
    m = cfg.modules
    rng = np.random.default_rng(cfg.seed)
    if m.v_init is None:
        v = np.full(m.n, setpoint(cfg))
    elif isinstance(m.v_init, list):
        v = np.array(m.v_init, dtype=float)
    else:
        v = np.full(m.n, float(m.v_init))
    jitter = rng.uniform(-1.0, 1.0, m.n)
    ctol = rng.uniform(-1.0, 1.0, m.n)
    v = v * (1.0 + m.v_init_jitter * jitter)
    c = m.capacitance * (1.0 + m.capacitance_tolerance * ctol)
    return v, c


def event_arrays(cfg: ScenarioConfig):
    """Events sorted by time and mapped to plant-step indices.

    An event at time t_e takes effect at the last step boundary not after
    t_e, i.e. step floor(t_e / dt).
    """
    evs = sorted(enumerate(cfg.events), key=lambda p: (p[1].time, p[0]))
    steps = np.array([int(math.floor(e.time / cfg.sim.dt + 1e-9)) for _, e in evs], np.int64)
    acts = np.array([EVENT_CODES[e.action] for _, e in evs], np.int64)
    vals = np.array([0.0 if e.value is None else e.value for _, e in evs], float)
    mods = np.array([0 if e.module is None else e.module for _, e in evs], np.int64)
    return steps, acts, vals, mods


def run(cfg: ScenarioConfig) -> TimeSeriesRecord:
    """Execute one scenario and return its sampled record.

    ``record.meta`` carries the energy balance, complementarity violations,
    the longest saturation run (grid cycles), resolved gains and timing.
    """
    grid = grid_params(cfg)
    m, c, s = cfg.modules, cfg.controller, cfg.sim
    module_params(cfg)
    cp_obj = controller_params(cfg)
    cp = cp_obj.to_vector()
    cs = equilibrium_state(grid, cp_obj, c.i_ref_amp, c.a_m_target, c.leading).to_vector()
    v, cap = initial_conditions(cfg)
    i0 = float(cs[K.CS_IREF])
    ctrl_div = int(round(1.0 / (c.f_control * s.dt)))
    rec_div = s.record_every
    n_steps = int(round(s.duration / s.dt)) // rec_div * rec_div
    if n_steps == 0:
        raise ConfigError("duration shorter than one record interval", "sim.duration")
    rows = n_steps // rec_div
    rec = np.zeros((rows, 12))
    rec_vsm = np.zeros((rows, m.n))
    energy = np.zeros(5)
    sat_cycles = np.zeros(1)
    ev = event_arrays(cfg)
    latch = 0 if cfg.modulation.latch == "edge" else 1
    e0 = float(K.stored_energy(v, cap, i0, grid.l_g))

    t_start = time.perf_counter()
    status, i_end, nrow, bad = K.simulate(
        n_steps, s.dt, ctrl_div, rec_div, grid.v_amp, grid.omega, 0.0, grid.l_g, grid.r_g,
        cap, v, i0, m.diode_drop, m.device_resistance, m.parallel_loop_resistance,
        cfg.modulation.f_carrier, latch, cp, cs, *ev, rec, rec_vsm, energy, sat_cycles)
    elapsed = time.perf_counter() - t_start

    if status != 0:
        last = max(nrow - 1, 0)
        raise DivergenceError(
            f"non-finite plant state at t = {bad * s.dt:.6g} s",
            {"step": int(bad), "t": bad * s.dt, "i_o": float(i_end),
             "cap_voltages": [float(x) for x in v],
             "last_recorded": {"t": float(rec[last, 0]), "i_o": float(rec[last, 2]),
                               "v_m": float(rec[last, 5])},
             "controller": {k: float(cs[i]) for i, k in enumerate(_CS_NAMES)}})

    e1 = float(K.stored_energy(v, cap, i_end, grid.l_g))
    residual = energy[0] + energy[4] - (e1 - e0) - energy[1]
    meta = {
        "grid_energy_in": float(energy[0]),
        "dissipated": float(energy[1]),
        "throughput": float(energy[2]),
        "injected": float(energy[4]),
        "stored_change": e1 - e0,
        "energy_residual": float(residual),
        "energy_residual_rel": float(abs(residual) / energy[2]) if energy[2] > 0 else 0.0,
        "complementarity_violations": int(energy[3]),
        "max_saturated_cycles": int(sat_cycles[0]),
        "setpoint": setpoint(cfg),
        "gains": {"kp_i": cp_obj.kp_i, "ki_i": cp_obj.ki_i, "kr_i": cp_obj.kr_i,
                  "kp_v": cp_obj.kp_v, "ki_v": cp_obj.ki_v},
        "elapsed_s": elapsed,
        "warnings": [],
    }
    if sat_cycles[0] > 1:
        msg = f"modulation saturated for {int(sat_cycles[0])} consecutive grid cycles"
        meta["warnings"].append(msg)
        warnings.warn(msg, SaturationWarning, stacklevel=2)

    channels = {name: rec[:, col].copy() for name, _, col in CHANNELS}
    units = {name: unit for name, unit, _ in CHANNELS}
    for k in range(m.n):
        channels[f"v_sm{k + 1}"] = rec_vsm[:, k].copy()
        units[f"v_sm{k + 1}"] = "V"
    events = [(float(ev[0][i] * s.dt), _event_label(e))
              for i, e in enumerate(sorted(cfg.events, key=lambda e: e.time))]
    return TimeSeriesRecord(rec[:, 0].copy(), channels, units, events, meta)


_CS_NAMES = ["theta", "pll_integrator", "sogi_v", "sogi_q", "omega", "inner_integrator",
             "res_x1", "res_x2", "i_bar", "q_bar", "outer_integrator", "epsilon", "v_m",
             "saturated", "a_hat", "i_ref_amp", "a_m_target", "leading", "counter", "i_ref",
             "unlocked"]


def _event_label(e) -> str:
    if e.action == "toggle_leading":
        return e.action
    if e.action == "set_vcap":
        return f"set_vcap[{e.module}]={e.value:g}"
    return f"{e.action}={e.value:g}"


# --------------------------------------------------------------------------
# metrics


def _window(record: TimeSeriesRecord, spec: dict, f0: float) -> slice:
    t_end = spec.get("t_end", float(record.t[-1]) + 1.0 / record.sample_rate)
    return analysis.cycle_window(record.t, t_end, f0, _cycles(record, spec, f0))


def _cycles(record, spec, f0) -> int:
    if spec.get("cycles") is not None:
        return int(spec["cycles"])
    return analysis.integer_cycles(record.sample_rate, f0, 10)


def evaluate_metric(record: TimeSeriesRecord, spec: dict, f0: float) -> float:
    """Evaluate one metric described by a mapping (see README for the kinds)."""
    kind = spec["kind"]
    fs = record.sample_rate
    if kind == "meta":
        if spec["key"] not in record.meta:
            raise ConfigError(f"record carries no {spec['key']!r}", "metric.key")
        return float(record.meta[spec["key"]])
    if kind == "ratio":
        return evaluate_metric(record, spec["num"], f0) / evaluate_metric(record, spec["den"], f0)
    if kind == "difference":
        return evaluate_metric(record, spec["a"], f0) - evaluate_metric(record, spec["b"], f0)
    if kind == "settling":
        x = _channel_expr(record, spec["channel"])
        target = spec.get("target", 0.0)
        if target == "final":
            # value over the last grid cycle of the record
            target = float(np.mean(x[-int(round(fs / f0)):]))
        return analysis.settling_time(record.t, x, spec["t_event"], target,
                                      spec.get("band", 0.05), envelope=spec.get("envelope", "raw"),
                                      window=spec.get("window"), scale=spec.get("scale"))
    w = _window(record, spec, f0)
    min_cycles = int(spec.get("min_cycles", min(10, _cycles(record, spec, f0))))
    if kind == "thd":
        return analysis.thd(_channel_expr(record, spec["channel"])[w], fs, f0,
                            spec.get("harmonics", 50), min_cycles=min_cycles)
    if kind == "thd_full_band":
        return analysis.thd_full_band(record.channel(spec["channel"])[w],
                                      record.channel(spec["power_channel"])[w], fs, f0,
                                      min_cycles=min_cycles)
    if kind == "mean":
        return float(np.mean(_channel_expr(record, spec["channel"])[w]))
    if kind == "max_abs":
        return float(np.max(np.abs(_channel_expr(record, spec["channel"])[w])))
    if kind == "spread":
        return analysis.spread(record.module_voltages()[w]).max_min
    if kind == "cycle_spread":
        t = record.t[w]
        return analysis.cycle_spread(t, record.module_voltages()[w], t[0],
                                     t[-1] + 1.0 / fs, f0)
    if kind == "level_count":
        return float(analysis.level_count(record.channel("level")[w]))
    if kind == "phase":
        # phase of channel relative to reference, degrees in (-180, 180]
        _, pa = analysis.fundamental_phasor(_channel_expr(record, spec["channel"])[w], fs, f0)
        _, pb = analysis.fundamental_phasor(_channel_expr(record, spec["reference"])[w], fs, f0)
        return float((math.degrees(pa - pb) + 180.0) % 360.0 - 180.0)
    if kind == "overshoot":
        return analysis.overshoot(record.t, _channel_expr(record, spec["channel"]), f0)
    if kind == "amplitude":
        amp, _ = analysis.fundamental_phasor(_channel_expr(record, spec["channel"])[w], fs, f0)
        return amp
    if kind == "corridor_entry":
        t = record.t
        i0 = record.index_at(spec.get("t_start", 0.0))
        return analysis.corridor_entry_time(t[i0:], record.module_voltages()[i0:], f0,
                                            spec["corridor"]) + (t[i0] - t[0])
    raise ConfigError(f"unknown metric kind {kind!r}", "metric.kind")


def _channel_expr(record: TimeSeriesRecord, name: str) -> np.ndarray:
    """A channel, ``vsm_mean`` (module average) or ``a-b`` of two channels."""
    if name == "vsm_mean":
        return record.module_voltages().mean(axis=1)
    if "-" in name and name not in record.channels:
        a, b = name.split("-", 1)
        return record.channel(a) - record.channel(b)
    return record.channel(name)


# --------------------------------------------------------------------------
# golden scenarios


@dataclass
class Expectation:
    name: str
    metric: dict
    provenance: str
    target: float | dict | None = None
    tolerance: float | None = None
    relative: bool = False
    min: float | None = None
    max: float | None = None

    def bounds(self, cfg: ScenarioConfig) -> tuple[float, float]:
        lo, hi = -math.inf, math.inf
        if self.target is not None:
            tgt = _resolve_target(self.target, cfg)
            tol = self.tolerance or 0.0
            if self.relative:
                tol *= abs(tgt)
            lo, hi = tgt - tol, tgt + tol
        if self.min is not None:
            lo = max(lo, self.min)
        if self.max is not None:
            hi = min(hi, self.max)
        return lo, hi


def _resolve_target(target, cfg):
    if isinstance(target, dict):
        if "setpoint" in target:
            return setpoint(cfg, **target["setpoint"])
        if "setpoint_ratio" in target:
            a, b = target["setpoint_ratio"]
            return setpoint(cfg, **a) / setpoint(cfg, **b)
        raise ConfigError(f"unknown target form {target!r}", "expectations.target")
    return float(target)


@dataclass
class GoldenScenario:
    name: str
    config: ScenarioConfig
    expectations: list[Expectation] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> GoldenScenario:
        cfg = ScenarioConfig.from_dict(data["config"])
        exps = []
        for i, e in enumerate(data.get("expectations", [])):
            if "provenance" not in e:
                raise ConfigError("every expectation needs a provenance tag",
                                  f"expectations[{i}].provenance")
            exps.append(Expectation(**e))
        return cls(data.get("name", cfg.name), cfg, exps)

    @classmethod
    def load(cls, path) -> GoldenScenario:
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


GOLDEN_NAMES = ("sim-steady", "sim-step", "sim-converge", "exp-steady", "exp-step",
                "exp-reversal", "exp-amref")


def golden_path(name: str) -> Path:
    return Path(str(resources.files(__package__) / "goldens" / f"{name}.yaml"))


def load_golden(name: str) -> GoldenScenario:
    p = golden_path(name)
    if not p.is_file():
        raise ConfigError(f"unknown golden scenario {name!r}; available: {', '.join(GOLDEN_NAMES)}")
    return GoldenScenario.load(p)


def resolve_config(ref: str) -> ScenarioConfig:
    """Load a config from a path, or from the golden library by name."""
    p = Path(ref)
    if p.is_file():
        text = yaml.safe_load(p.read_text())
        if isinstance(text, dict) and "config" in text and "grid" not in text:
            return GoldenScenario.from_dict(text).config
        return ScenarioConfig.from_dict(text)
    name = p.name[:-5] if p.name.endswith(".yaml") else p.name
    if name in GOLDEN_NAMES:
        return load_golden(name).config
    raise ConfigError(f"config not found: {ref} (give a YAML path or one of "
                      f"{', '.join(GOLDEN_NAMES)})")


@dataclass
class ReportRow:
    scenario: str
    metric: str
    measured: float
    lower: float
    upper: float
    provenance: str
    passed: bool


@dataclass
class ValidationReport:
    rows: list[ReportRow] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors and all(r.passed for r in self.rows)

    def table(self) -> str:
        lines = [f"{'scenario':<14} {'metric':<28} {'measured':>12} {'lower':>12} "
                 f"{'upper':>12} {'tag':<10} result"]
        for r in self.rows:
            lines.append(f"{r.scenario:<14} {r.metric:<28} {r.measured:>12.5g} {r.lower:>12.5g} "
                         f"{r.upper:>12.5g} {r.provenance:<10} {'PASS' if r.passed else 'FAIL'}")
        for name, err in self.errors.items():
            lines.append(f"{name:<14} ERROR {err}")
        return "\n".join(lines)


def evaluate(golden: GoldenScenario, record: TimeSeriesRecord) -> list[ReportRow]:
    f0 = golden.config.grid.freq
    rows = []
    for e in golden.expectations:
        val = evaluate_metric(record, e.metric, f0)
        lo, hi = e.bounds(golden.config)
        rows.append(ReportRow(golden.name, e.name, val, lo, hi, e.provenance,
                              bool(lo <= val <= hi)))
    return rows


def validate(goldens, workers: int = 1) -> ValidationReport:
    """Run every golden scenario and check its expectations."""
    goldens = list(goldens)
    report = ValidationReport()

    def one(g):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SaturationWarning)
            return evaluate(g, run(g.config))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            futures = [(g, pool.submit(one, g)) for g in goldens]
            results = []
            for g, fut in futures:
                try:
                    results.append((g, fut.result()))
                except Exception as exc:  # noqa: BLE001 - failures become report content
                    results.append((g, exc))
    else:
        results = []
        for g in goldens:
            try:
                results.append((g, one(g)))
            except Exception as exc:  # noqa: BLE001
                results.append((g, exc))
    for g, res in results:
        if isinstance(res, Exception):
            report.errors[g.name] = f"{type(res).__name__}: {res}"
        else:
            report.rows.extend(res)
    return report
