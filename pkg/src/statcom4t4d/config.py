"""Scenario configuration: schema, validation, YAML I/O and overrides."""

from __future__ import annotations

import copy
import math
import re
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError

EVENT_ACTIONS = ("set_i_ref", "set_a_m", "toggle_leading", "grid_scale", "set_vcap")


@dataclass
class GridSection:
    v_amp: float
    freq: float = 60.0
    l_g: float = 10e-3
    r_g: float = 0.0


@dataclass
class ModulesSection:
    n: int
    capacitance: float
    diode_drop: float = 0.7
    device_resistance: float = 0.02
    parallel_loop_resistance: float = 0.1
    # None: start every module at the set-point estimate
    v_init: typing.Optional[typing.Union[float, typing.List[float]]] = None
    v_init_jitter: float = 0.0
    capacitance_tolerance: float = 0.0
    v_sm_max: typing.Optional[float] = None


@dataclass
class ControllerSection:
    i_ref_amp: float
    a_m_target: float = 0.8
    leading: bool = False
    eps_max: float = 0.2
    f_control: float = 100e3
    outer_div: int = 10
    f_lpf: float = 8.3
    f_bandwidth: float = 1000.0
    resonant_ratio: float = 1500.0
    kp_i: typing.Optional[float] = None
    ki_i: float = 0.0
    kr_i: typing.Optional[float] = None
    kp_v: typing.Optional[float] = None
    ki_v: typing.Optional[float] = None
    outer_loop: bool = True
    eps_fixed: float = 0.0
    ideal_pll: bool = False
    pll_bandwidth: float = 15.0
    pll_damping: float = 0.707
    sogi_k: float = math.sqrt(2.0)
    pll_bound: float = 5.0


@dataclass
class ModulationSection:
    f_carrier: float = 5000.0
    latch: str = "edge"


@dataclass
class SimSection:
    duration: float
    dt: float = 1e-6
    record_every: int = 10


@dataclass
class Event:
    time: float
    action: str
    value: typing.Optional[float] = None
    module: typing.Optional[int] = None


@dataclass
class ScenarioConfig:
    grid: GridSection
    modules: ModulesSection
    controller: ControllerSection
    sim: SimSection
    modulation: ModulationSection = field(default_factory=ModulationSection)
    events: typing.List[Event] = field(default_factory=list)
    seed: int = 0
    name: str = "scenario"
    description: str = ""

    # ------------------------------------------------------------- io

    @classmethod
    def from_dict(cls, data) -> ScenarioConfig:
        cfg = _build(cls, data, "")
        validate(cfg)
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        order = ["name", "description", "seed", "grid", "modules", "controller",
                 "modulation", "sim", "events"]
        return {k: d[k] for k in order}

    @classmethod
    def from_yaml(cls, text: str) -> ScenarioConfig:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"YAML syntax error: {exc}") from None
        return cls.from_dict(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def load(cls, path) -> ScenarioConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_yaml(p.read_text())

    def save(self, path):
        Path(path).write_text(self.to_yaml())

    def with_overrides(self, overrides) -> ScenarioConfig:
        return ScenarioConfig.from_dict(apply_overrides(self.to_dict(), overrides))


# ------------------------------------------------------------------ building

def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp).replace("typing.", ""))


_EXP_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+")


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(a, value, path)
            except ConfigError as exc:
                errors.append(exc)
        raise ConfigError(f"expected {_type_name(tp)}, got {value!r}", path)
    if origin in (list, typing.List):
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, str) and _EXP_NUMBER.fullmatch(value.strip()):
            # YAML 1.1 reads "1e5" as a string
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        if not math.isfinite(value):
            raise ConfigError("must be finite", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if isinstance(tp, type) and hasattr(tp, "__dataclass_fields__"):
        return _build(tp, value, path)
    raise ConfigError(f"unsupported type {tp}", path)  # pragma: no cover


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", path or "<root>")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", _join(path, str(key)))
    kwargs = {}
    for f in fields(cls):
        p = _join(path, f.name)
        if f.name in data:
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], p)
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError("required key missing", p)
    return cls(**kwargs)


def _join(path, key):
    return f"{path}.{key}" if path else key


# ------------------------------------------------------------------ checks

def _positive(value, path):
    if not value > 0:
        raise ConfigError("must be > 0", path)


def _nonneg(value, path):
    if not value >= 0:
        raise ConfigError("must be >= 0", path)


def validate(cfg: ScenarioConfig):
    """Semantic checks beyond types; raises ConfigError with a dotted path."""
    g, m, c, s = cfg.grid, cfg.modules, cfg.controller, cfg.sim
    _nonneg(g.v_amp, "grid.v_amp")
    _positive(g.freq, "grid.freq")
    _positive(g.l_g, "grid.l_g")
    _nonneg(g.r_g, "grid.r_g")

    if m.n < 1:
        raise ConfigError("must be >= 1", "modules.n")
    _positive(m.capacitance, "modules.capacitance")
    _nonneg(m.diode_drop, "modules.diode_drop")
    _nonneg(m.device_resistance, "modules.device_resistance")
    _positive(m.parallel_loop_resistance, "modules.parallel_loop_resistance")
    _nonneg(m.v_init_jitter, "modules.v_init_jitter")
    if not 0.0 <= m.capacitance_tolerance < 1.0:
        raise ConfigError("must lie in [0, 1)", "modules.capacitance_tolerance")
    if isinstance(m.v_init, list):
        if len(m.v_init) != m.n:
            raise ConfigError(f"expected {m.n} values, got {len(m.v_init)}", "modules.v_init")
        for i, v in enumerate(m.v_init):
            _nonneg(v, f"modules.v_init[{i}]")
    elif m.v_init is not None:
        _nonneg(m.v_init, "modules.v_init")
    if m.v_sm_max is not None:
        _positive(m.v_sm_max, "modules.v_sm_max")

    _nonneg(c.i_ref_amp, "controller.i_ref_amp")
    if not 0.0 < c.a_m_target <= 1.0:
        raise ConfigError("must lie in (0, 1]", "controller.a_m_target")
    _positive(c.eps_max, "controller.eps_max")
    _positive(c.f_control, "controller.f_control")
    if c.outer_div < 1:
        raise ConfigError("must be >= 1", "controller.outer_div")
    _positive(c.f_lpf, "controller.f_lpf")
    _positive(c.f_bandwidth, "controller.f_bandwidth")
    _nonneg(c.resonant_ratio, "controller.resonant_ratio")
    for key in ("kp_i", "kr_i", "kp_v", "ki_v"):
        val = getattr(c, key)
        if val is not None:
            _nonneg(val, f"controller.{key}")
    _nonneg(c.ki_i, "controller.ki_i")
    if abs(c.eps_fixed) > c.eps_max:
        raise ConfigError("must not exceed eps_max in magnitude", "controller.eps_fixed")
    _positive(c.pll_bandwidth, "controller.pll_bandwidth")
    _positive(c.pll_damping, "controller.pll_damping")
    _positive(c.sogi_k, "controller.sogi_k")
    _positive(c.pll_bound, "controller.pll_bound")

    _positive(cfg.modulation.f_carrier, "modulation.f_carrier")
    if cfg.modulation.latch not in ("edge", "cycle"):
        raise ConfigError("must be 'edge' or 'cycle'", "modulation.latch")
    if cfg.modulation.f_carrier < 20.0 * g.freq:
        raise ConfigError("carrier must be at least 20x the grid frequency",
                          "modulation.f_carrier")

    _positive(s.duration, "sim.duration")
    _positive(s.dt, "sim.dt")
    if s.record_every < 1:
        raise ConfigError("must be >= 1", "sim.record_every")
    if s.dt > 1.0 / (20.0 * cfg.modulation.f_carrier):
        raise ConfigError("time step too coarse for the carrier frequency", "sim.dt")
    ratio = 1.0 / (c.f_control * s.dt)
    if ratio < 1.0 - 1e-9 or abs(ratio - round(ratio)) > 1e-6:
        raise ConfigError("control period must be an integer multiple of sim.dt",
                          "controller.f_control")
    alpha = 2.0 * math.pi * c.f_lpf / c.f_control
    if not 0.0 < alpha < 1.0:
        raise ConfigError("filter coefficient 2*pi*f_lpf/f_control must lie in (0, 1)",
                          "controller.f_lpf")

    for i, ev in enumerate(cfg.events):
        p = f"events[{i}]"
        if ev.action not in EVENT_ACTIONS:
            raise ConfigError(f"unknown action {ev.action!r}; expected one of "
                              f"{', '.join(EVENT_ACTIONS)}", f"{p}.action")
        if not 0.0 <= ev.time <= s.duration:
            raise ConfigError("event time outside [0, duration]", f"{p}.time")
        if ev.action != "toggle_leading" and ev.value is None:
            raise ConfigError("action needs a value", f"{p}.value")
        if ev.action == "set_a_m" and not 0.0 < ev.value <= 1.0:
            raise ConfigError("must lie in (0, 1]", f"{p}.value")
        if ev.action == "set_i_ref":
            _nonneg(ev.value, f"{p}.value")
        if ev.action == "grid_scale":
            _nonneg(ev.value, f"{p}.value")
        if ev.action == "set_vcap":
            if ev.module is None or not 0 <= ev.module < m.n:
                raise ConfigError(f"module index must lie in [0, {m.n})", f"{p}.module")
            _nonneg(ev.value, f"{p}.value")
        elif ev.module is not None:
            raise ConfigError("only set_vcap takes a module index", f"{p}.module")


# ------------------------------------------------------------------ overrides

def apply_overrides(data: dict, overrides) -> dict:
    """Return a copy of ``data`` with ``key.path=value`` assignments applied.

    Values are parsed as YAML scalars or flow collections; list items are
    addressed with an integer path component (``events.0.time=0.2``).
    Type checking happens when the result is validated.
    """
    out = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse value {raw!r}", key) from None
        parts = key.split(".")
        node = out
        for i, part in enumerate(parts):
            here = ".".join(parts[: i + 1])
            last = i == len(parts) - 1
            if isinstance(node, list):
                try:
                    idx = int(part)
                    node[idx]
                except (ValueError, IndexError):
                    raise ConfigError("invalid list index", here) from None
                if last:
                    node[idx] = value
                else:
                    node = node[idx]
            elif isinstance(node, dict):
                if part not in node:
                    raise ConfigError("unknown key", here)
                if last:
                    node[part] = value
                else:
                    node = node[part]
            else:
                raise ConfigError("cannot descend into a scalar", here)
    return out
