"""Behavioural model of a cascaded 4T4D arm and its grid connection.

Each module is one of seven interconnection states. Series states insert the
capacitor with either polarity, bypass states pass the arm current along a
rail, and the two parallel states join a module with its lower neighbour
through a diode-gated link that conducts in one direction only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _kernels as K
from .errors import ConfigError, DivergenceError


class ModuleState(IntEnum):
    SERIES_PLUS = K.SERIES_PLUS
    SERIES_MINUS = K.SERIES_MINUS
    PARALLEL_PLUS = K.PARALLEL_PLUS
    PARALLEL_MINUS = K.PARALLEL_MINUS
    BYPASS_PLUS = K.BYPASS_PLUS
    BYPASS_MINUS = K.BYPASS_MINUS
    PASSIVE = K.PASSIVE

    @property
    def is_parallel(self) -> bool:
        return self in (ModuleState.PARALLEL_PLUS, ModuleState.PARALLEL_MINUS)


@dataclass(frozen=True)
class ModuleParams:
    """Electrical parameters shared by all modules of an arm.

    ``capacitance`` may be a scalar or one value per module.
    """

    capacitance: float | np.ndarray
    v_init: float = 0.0
    diode_drop: float = 0.0
    device_resistance: float = 0.0
    parallel_loop_resistance: float = 0.1

    def __post_init__(self):
        if np.any(np.asarray(self.capacitance, dtype=float) <= 0.0):
            raise ConfigError("must be > 0", "modules.capacitance")
        if self.diode_drop < 0.0:
            raise ConfigError("must be >= 0", "modules.diode_drop")
        if self.device_resistance < 0.0:
            raise ConfigError("must be >= 0", "modules.device_resistance")
        if self.parallel_loop_resistance < 0.0:
            raise ConfigError("must be >= 0", "modules.parallel_loop_resistance")

    def capacitances(self, n: int) -> np.ndarray:
        c = np.asarray(self.capacitance, dtype=float)
        if c.ndim == 0:
            return np.full(n, float(c))
        if c.shape != (n,):
            raise ConfigError(f"expected {n} values, got {c.size}", "modules.capacitance")
        return c.copy()


@dataclass(frozen=True)
class GridParams:
    v_amp: float
    freq: float
    l_g: float
    r_g: float = 0.0

    def __post_init__(self):
        if self.freq <= 0.0:
            raise ConfigError("must be > 0", "grid.freq")
        if self.l_g <= 0.0:
            raise ConfigError("must be > 0", "grid.l_g")
        if self.r_g < 0.0:
            raise ConfigError("must be >= 0", "grid.r_g")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.freq

    def voltage(self, t: float, scale: float = 1.0) -> float:
        return scale * self.v_amp * math.sin(self.omega * t)


@dataclass
class PlantState:
    cap_voltages: np.ndarray
    i_o: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        self.cap_voltages = np.array(self.cap_voltages, dtype=float)

    @property
    def n_modules(self) -> int:
        return self.cap_voltages.shape[0]

    def copy(self) -> PlantState:
        return PlantState(self.cap_voltages.copy(), self.i_o, self.t)


@dataclass
class EnergyLedger:
    """Running energy totals of a plant trajectory (joules)."""

    grid_in: float = 0.0
    dissipated: float = 0.0
    throughput: float = 0.0
    violations: int = 0
    _raw: np.ndarray = field(default_factory=lambda: np.zeros(4), repr=False)

    def _sync(self):
        self.grid_in, self.dissipated, self.throughput = map(float, self._raw[:3])
        self.violations = int(self._raw[3])


def _state_array(states, n: int) -> np.ndarray:
    arr = np.asarray(states, dtype=np.int64)
    if arr.shape != (n,):
        raise ConfigError(f"state vector length {arr.size} does not match {n} modules", "states")
    if arr.size and (arr.min() < 0 or arr.max() > K.PASSIVE):
        raise ConfigError("unknown module state", "states")
    return arr


def passive_polarity(i_o: float) -> int:
    """Insertion sign of a passive (rectifying) module; +1 at zero current."""
    return int(K.passive_polarity(float(i_o)))


def arm_voltage(states, plant: PlantState, params: ModuleParams) -> float:
    st = _state_array(states, plant.n_modules)
    return float(K.arm_voltage(st, plant.cap_voltages, float(plant.i_o),
                               params.diode_drop, params.device_resistance))


def parallel_link_currents(states, cap_voltages, params: ModuleParams) -> np.ndarray:
    """Current of each link (k-1, k) in its permitted direction, length N-1."""
    v = np.asarray(cap_voltages, dtype=float)
    st = _state_array(states, v.shape[0])
    _check_links(st, params)
    out = np.zeros(max(v.shape[0] - 1, 0))
    if out.size:
        K.link_currents(st, v, params.diode_drop, params.parallel_loop_resistance, out)
    return out


def _check_links(st: np.ndarray, params: ModuleParams):
    if params.parallel_loop_resistance == 0.0 and np.any(
            (st[1:] == K.PARALLEL_PLUS) | (st[1:] == K.PARALLEL_MINUS)):
        raise ConfigError("ideal paralleling (zero loop resistance) is not supported",
                          "modules.parallel_loop_resistance")


def step(plant: PlantState, states, grid: GridParams, params: ModuleParams, dt: float,
         *, f_carrier: float | None = None, grid_scale: float = 1.0,
         energy: EnergyLedger | None = None) -> PlantState:
    """Advance the plant by ``dt`` with the module states held fixed.

    Returns a new state; the input is not modified. When ``energy`` is given
    it accumulates the grid energy, dissipation and throughput of the step.
    """
    if not dt > 0.0:
        raise ConfigError("must be > 0", "sim.dt")
    if f_carrier is not None and dt > 1.0 / (20.0 * f_carrier):
        raise ConfigError("time step too coarse for the carrier frequency", "sim.dt")
    st = _state_array(states, plant.n_modules)
    _check_links(st, params)
    nxt = plant.copy()
    links = np.zeros(max(plant.n_modules - 1, 1))
    raw = energy._raw if energy is not None else np.zeros(4)
    v_g = grid.voltage(plant.t, grid_scale)
    nxt.i_o = float(K.plant_step(nxt.cap_voltages, params.capacitances(plant.n_modules),
                                 float(plant.i_o), st, v_g, grid.l_g, grid.r_g,
                                 params.diode_drop, params.device_resistance,
                                 params.parallel_loop_resistance, dt, links, raw))
    nxt.t = plant.t + dt
    if energy is not None:
        energy._sync()
    if not (math.isfinite(nxt.i_o) and np.all(np.isfinite(nxt.cap_voltages))):
        raise DivergenceError("non-finite plant state",
                              {"t": plant.t, "i_o": plant.i_o,
                               "cap_voltages": plant.cap_voltages.tolist()})
    return nxt


def stored_energy(plant: PlantState, grid: GridParams, params: ModuleParams) -> float:
    c = params.capacitances(plant.n_modules)
    return float(K.stored_energy(plant.cap_voltages, c, float(plant.i_o), grid.l_g))
