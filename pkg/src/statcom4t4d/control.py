"""Sensorless dual-loop controller and design formulas.

The inner loop makes the arm current follow a quadrature reference. The
outer loop never sees a module voltage: it estimates the modulation depth
from the inner loop's own output by synchronous demodulation and steers the
reference phase offset ``epsilon`` so that the depth tracks its target.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import astuple, dataclass, fields, replace

import numpy as np

from . import _kernels as K
from .circuit import GridParams
from .errors import ConfigError


# --------------------------------------------------------------------------
# PI controller


@dataclass(frozen=True)
class PiParams:
    kp: float
    ki: float
    out_min: float = -1.0
    out_max: float = 1.0
    anti_windup: bool = True

    def __post_init__(self):
        if not self.out_min < self.out_max:
            raise ConfigError("out_min must be < out_max", "controller")


@dataclass(frozen=True)
class PiState:
    integrator: float = 0.0


def pi_step(error: float, params: PiParams, state: PiState, ts: float) -> tuple[float, PiState]:
    """Clamped PI output and the next state (conditional integration)."""
    out, integ = K.pi_step(float(error), params.kp, params.ki, ts, params.out_min,
                           params.out_max, state.integrator, params.anti_windup)
    return float(out), PiState(float(integ))


# --------------------------------------------------------------------------
# synchronous I/Q amplitude estimation


@dataclass(frozen=True)
class IqEstimatorState:
    alpha: float
    fs: float
    i_bar: float = 0.0
    q_bar: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)", "controller.f_lpf")

    @classmethod
    def from_cutoff(cls, f_c: float, fs: float) -> IqEstimatorState:
        return cls(alpha=2.0 * math.pi * f_c / fs, fs=fs)

    @property
    def cutoff(self) -> float:
        return self.alpha * self.fs / (2.0 * math.pi)


def iq_demodulate(v_m: float, theta_g: float, state: IqEstimatorState) -> IqEstimatorState:
    ib, qb = K.iq_update(float(v_m), float(theta_g), state.alpha, state.i_bar, state.q_bar)
    return replace(state, i_bar=float(ib), q_bar=float(qb))


def amplitude_estimate(state: IqEstimatorState) -> float:
    return float(K.amplitude_from_iq(state.i_bar, state.q_bar))


def lpf_gain(alpha: float, f: float, fs: float) -> float:
    """Magnitude response of y[k] = (1-a) y[k-1] + a x[k] at frequency f."""
    z = cmath.exp(-2j * math.pi * f / fs)
    return abs(alpha / (1.0 - (1.0 - alpha) * z))


# --------------------------------------------------------------------------
# PLL


@dataclass(frozen=True)
class PllParams:
    w_nom: float
    ts: float
    kp: float = 2.0 * 0.707 * 2.0 * math.pi * 15.0
    ki: float = (2.0 * math.pi * 15.0) ** 2
    sogi_k: float = math.sqrt(2.0)
    ideal: bool = False
    w_bound: float = 2.0 * math.pi * 5.0


@dataclass(frozen=True)
class PllState:
    theta: float = 0.0
    integrator: float = 0.0
    v_alpha: float = 0.0
    v_beta: float = 0.0
    omega: float = 0.0

    def locked(self, params: PllParams) -> bool:
        return abs(self.omega - params.w_nom) <= params.w_bound


def pll_step(v_g_sample: float, params: PllParams, state: PllState,
             theta_ideal: float | None = None) -> tuple[float, PllState]:
    """Next grid-phase estimate. ``theta_ideal`` is used only in bypass mode."""
    if params.ideal:
        if theta_ideal is None:
            raise ValueError("ideal PLL mode needs theta_ideal")
        th = float(K.wrap_angle(theta_ideal))
        return th, replace(state, theta=th, omega=params.w_nom)
    omega = state.omega if state.omega > 0.0 else params.w_nom
    th, integ, v_al, v_q, om = K.sogi_pll_step(
        float(v_g_sample), params.ts, params.w_nom, params.kp, params.ki, params.sogi_k,
        state.theta, state.integrator, state.v_alpha, state.v_beta, omega)
    return float(th), PllState(float(th), float(integ), float(v_al), float(v_q), float(om))


# --------------------------------------------------------------------------
# reference and design formulas


def current_reference(theta_g: float, i_ref_amp: float, epsilon: float, leading: bool) -> float:
    """Quadrature current reference; positive ``epsilon`` means export."""
    return float(K.current_reference(float(theta_g), float(i_ref_amp), float(epsilon),
                                     bool(leading)))


def clarke(v_a, v_b, v_c):
    """Amplitude-invariant Clarke transform."""
    v_alpha = (2.0 / 3.0) * (v_a - 0.5 * v_b - 0.5 * v_c)
    v_beta = (2.0 / 3.0) * (math.sqrt(3.0) / 2.0) * (np.subtract(v_b, v_c))
    return v_alpha, v_beta


def three_phase_amplitude(v_alpha, v_beta):
    return np.hypot(v_alpha, v_beta)


def active_power(v_g_amp: float, i_o_amp: float, epsilon: float) -> float:
    return v_g_amp * i_o_amp * math.sin(epsilon)


def arm_phasor(grid: GridParams, i_o_amp: float, leading: bool) -> complex:
    """Steady-state arm voltage phasor relative to the grid voltage phasor."""
    i_ph = 1j * i_o_amp if leading else -1j * i_o_amp
    return grid.v_amp - complex(grid.r_g, grid.omega * grid.l_g) * i_ph


def vsm_setpoint_estimate(grid: GridParams, i_o_amp: float, leading: bool,
                          a_m_target: float, n_modules: int) -> float:
    """Module voltage at which the arm meets the target modulation depth."""
    if not 0.0 < a_m_target <= 1.0:
        raise ConfigError("must lie in (0, 1]", "controller.a_m_target")
    if n_modules < 1:
        raise ConfigError("must be >= 1", "modules.n")
    return abs(arm_phasor(grid, i_o_amp, leading)) / (a_m_target * n_modules)


def io_envelope(a_m_target: float, n_modules: int, v_sm_max: float, v_g_max: float,
                grid: GridParams) -> float:
    """Largest capacitive current amplitude the arm can drive (may be <= 0)."""
    return (a_m_target * n_modules * v_sm_max - v_g_max) / (grid.omega * grid.l_g)


# --------------------------------------------------------------------------
# full controller


@dataclass(frozen=True)
class ControllerParams:
    ts: float
    kp_i: float
    ki_i: float
    kr_i: float
    kp_v: float
    ki_v: float
    outer_div: int
    alpha: float
    eps_max: float
    w_nom: float
    pll_kp: float
    pll_ki: float
    sogi_k: float
    ideal_pll: bool
    w_bound: float
    outer_on: bool = True
    eps_fixed: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.array([float(x) for x in astuple(self)])

    @property
    def pll(self) -> PllParams:
        return PllParams(self.w_nom, self.ts, self.pll_kp, self.pll_ki, self.sogi_k,
                         self.ideal_pll, self.w_bound)


@dataclass(frozen=True)
class ControllerState:
    """Complete discrete state of the controller; field order is the kernel layout."""

    theta: float = 0.0
    pll_integrator: float = 0.0
    sogi_v: float = 0.0
    sogi_q: float = 0.0
    omega: float = 0.0
    inner_integrator: float = 0.0
    res_x1: float = 0.0
    res_x2: float = 0.0
    i_bar: float = 0.0
    q_bar: float = 0.0
    outer_integrator: float = 0.0
    epsilon: float = 0.0
    v_m: float = 0.0
    saturated: float = 0.0
    a_hat: float = 0.0
    i_ref_amp: float = 0.0
    a_m_target: float = 0.8
    leading: float = 0.0
    counter: float = 0.0
    i_ref: float = 0.0
    unlocked: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_vector(cls, vec) -> ControllerState:
        return cls(*(float(x) for x in vec))

    @property
    def pi_current(self) -> PiState:
        return PiState(self.inner_integrator)

    @property
    def pi_modindex(self) -> PiState:
        return PiState(self.outer_integrator)


assert [f.name for f in fields(ControllerState)][K.CS_UNLOCKED] == "unlocked"
assert len(fields(ControllerState)) == K.CS_SIZE
assert len(fields(ControllerParams)) == K.CP_SIZE


@dataclass(frozen=True)
class Measurements:
    """The only plant quantities the controller is allowed to read."""

    v_g: float
    i_o: float
    theta_ideal: float | None = None


@dataclass(frozen=True)
class ControllerOutput:
    v_m: float
    epsilon: float
    saturated: bool
    a_hat: float
    i_ref: float


def controller_step(measurements: Measurements, params: ControllerParams,
                    state: ControllerState) -> tuple[ControllerOutput, ControllerState]:
    if params.ideal_pll and measurements.theta_ideal is None:
        raise ValueError("ideal PLL mode needs theta_ideal")
    cp = params.to_vector()
    cs = state.to_vector()
    th = measurements.theta_ideal if measurements.theta_ideal is not None else 0.0
    v_m = K.controller_update(float(measurements.v_g), float(measurements.i_o), float(th), cp, cs)
    new = ControllerState.from_vector(cs)
    out = ControllerOutput(float(v_m), new.epsilon, bool(new.saturated), new.a_hat, new.i_ref)
    return out, new


def design_inner_gains(grid: GridParams, n_modules: int, v_sm: float,
                       f_bandwidth: float = 1000.0, resonant_ratio: float = 1500.0):
    """(kp, ki, kr) for the proportional-resonant current loop.

    The arm behaves as a gain N*V_sm from v_m to volts in front of L_g, so a
    crossover at ``f_bandwidth`` needs kp = L_g * w_c / (N * V_sm).
    """
    kp = grid.l_g * 2.0 * math.pi * f_bandwidth / (n_modules * v_sm)
    return kp, 0.0, resonant_ratio * kp


def design_outer_gains(grid: GridParams, i_o_amp: float, n_modules: int, capacitance: float,
                       v_sm: float, a_m_target: float, eps_max: float, f_lpf: float,
                       zeta: float = 0.7):
    """(kp_v, ki_v) for the modulation-depth loop.

    kp is capped so that the twice-grid-frequency ripple left in the depth
    estimate moves epsilon by no more than half its clamp. ki then places the
    closed-loop poles at damping ``zeta`` around the linearised plant gain.
    """
    kp = eps_max * grid.freq / (a_m_target * f_lpf)
    g = a_m_target * grid.v_amp * i_o_amp / (2.0 * n_modules * capacitance * v_sm ** 2)
    ki = g * (kp / (2.0 * zeta)) ** 2
    return kp, ki


def equilibrium_state(grid: GridParams, params: ControllerParams, i_ref_amp: float,
                      a_m_target: float, leading: bool, theta0: float = 0.0) -> ControllerState:
    """Controller state consistent with steady operation at the given set point.

    Built from configuration values only; no module voltage is consulted.
    """
    v_arm = arm_phasor(grid, i_ref_amp, leading)
    phi = cmath.phase(v_arm)
    a = a_m_target
    return ControllerState(
        theta=theta0, omega=grid.omega,
        sogi_v=grid.v_amp * math.sin(theta0), sogi_q=-grid.v_amp * math.cos(theta0),
        res_x1=a * math.sin(theta0 + phi), res_x2=-a * math.cos(theta0 + phi),
        i_bar=0.5 * a * math.sin(phi), q_bar=0.5 * a * math.cos(phi), a_hat=a,
        v_m=a * math.sin(theta0 + phi), i_ref_amp=i_ref_amp, a_m_target=a_m_target,
        leading=1.0 if leading else 0.0,
        i_ref=current_reference(theta0, i_ref_amp, 0.0, leading),
        epsilon=0.0 if params.outer_on else params.eps_fixed,
    )
