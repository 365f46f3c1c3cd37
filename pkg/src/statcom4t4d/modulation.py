"""Phase-shifted-carrier PWM and parallel-link scheduling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .circuit import ModuleState
from .errors import ConfigError

LATCH_MODES = {"edge": K.LATCH_EDGE, "cycle": K.LATCH_CYCLE}


@dataclass(frozen=True)
class CarrierBank:
    """N unipolar triangular carriers in [0, 1], carrier k shifted by k/N period."""

    n_carriers: int
    f_carrier: float

    def __post_init__(self):
        if self.n_carriers < 1:
            raise ConfigError("must be >= 1", "modules.n")
        if self.f_carrier <= 0.0:
            raise ConfigError("must be > 0", "modulation.f_carrier")

    @property
    def phase_offsets(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n_carriers) / self.n_carriers

    def values(self, t: float) -> np.ndarray:
        return np.array([K.carrier(t, self.f_carrier, k, self.n_carriers)
                         for k in range(self.n_carriers)])


@dataclass
class ParallelLatch:
    """Per-link direction toggles; entry k belongs to the link (k-1, k).

    In ``edge`` mode a bit flips on every rising edge of link eligibility.
    In ``cycle`` mode the direction follows the parity of the carrier period.
    """

    n_modules: int
    mode: str = "edge"
    bits: np.ndarray = field(init=False)
    last: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.mode not in LATCH_MODES:
            raise ConfigError(f"unknown latch mode {self.mode!r}", "modulation.latch")
        self.bits = np.zeros(self.n_modules, dtype=np.bool_)
        self.last = np.zeros(self.n_modules, dtype=np.bool_)


def clamp_modulation(v_m_raw: float) -> tuple[float, bool]:
    """Hard clamp to [-1, 1]; the flag reports saturation."""
    v, sat = K.clamp(float(v_m_raw), -1.0, 1.0)
    return float(v), bool(sat)


def psc_compare(v_m: float, t: float, bank: CarrierBank) -> np.ndarray:
    flags = np.zeros(bank.n_carriers, dtype=np.bool_)
    K.psc_compare(float(v_m), float(t), bank.f_carrier, flags)
    return flags


def assign_states(insert_flags, v_m: float, latch: ParallelLatch, *, t: float = 0.0,
                  f_carrier: float = 1.0) -> np.ndarray:
    """Module states for one instant; updates ``latch`` in place.

    ``t`` and ``f_carrier`` only matter for the ``cycle`` latch mode.
    """
    flags = np.asarray(insert_flags, dtype=np.bool_)
    n = flags.shape[0]
    if n != latch.n_modules:
        raise ConfigError("flag vector length does not match latch", "states")
    states = np.empty(n, dtype=np.int64)
    eligible = np.zeros(n, dtype=np.bool_)
    parity = int(math.floor(t * f_carrier)) % 2
    K.assign_states(flags, float(v_m), latch.bits, latch.last, LATCH_MODES[latch.mode],
                    parity, states, eligible)
    return np.array([ModuleState(s) for s in states], dtype=object)


def active_links(states) -> list[tuple[int, int]]:
    """(source, destination) module indices of every activated link."""
    out = []
    for k in range(1, len(states)):
        if states[k] == ModuleState.PARALLEL_MINUS:
            out.append((k - 1, k))
        elif states[k] == ModuleState.PARALLEL_PLUS:
            out.append((k, k - 1))
    return out
