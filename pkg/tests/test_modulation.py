import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from statcom4t4d import _kernels as K
from statcom4t4d.circuit import ModuleState
from statcom4t4d.errors import ConfigError
from statcom4t4d.modulation import (CarrierBank, ParallelLatch, active_links, assign_states,
                                    clamp_modulation, psc_compare)

S = ModuleState


def carriers(t, f, n):
    """Vectorised triangular carriers, shape (len(t), n)."""
    x = t[:, None] * f + np.arange(n)[None, :] / n
    x -= np.floor(x)
    return 1.0 - np.abs(2.0 * x - 1.0)


class TestCarrierBank:
    def test_offsets(self):
        bank = CarrierBank(4, 5e3)
        off = bank.phase_offsets
        assert np.all(np.diff(off) > 0) and off[0] == 0.0 and off[-1] < 2 * math.pi

    def test_range(self):
        bank = CarrierBank(3, 5e3)
        for t in np.linspace(0, 1e-3, 97):
            v = bank.values(t)
            assert np.all((v >= 0.0) & (v <= 1.0))

    def test_invalid(self):
        with pytest.raises(ConfigError):
            CarrierBank(0, 5e3)


class TestPscCompare:
    def test_zero(self):
        assert not psc_compare(0.0, 1.23e-4, CarrierBank(5, 5e3)).any()

    @pytest.mark.parametrize("v", [1.0, -1.0])
    def test_full(self, v):
        bank = CarrierBank(5, 5e3)
        for t in np.linspace(0, 2e-4, 11):
            assert psc_compare(v, t, bank).all()

    def test_seven_levels(self):
        bank = CarrierBank(3, 5e3)
        latch = ParallelLatch(3)
        t = np.arange(0, 1 / 60, 1e-6)
        levels = set()
        for tk in t[::3]:
            vm = math.sin(2 * math.pi * 60 * tk)
            flags = psc_compare(vm, tk, bank)
            states = assign_states(flags, vm, latch)
            levels.add(sum(1 if s == S.SERIES_PLUS else -1 if s == S.SERIES_MINUS else 0
                           for s in states))
        assert levels == set(range(-3, 4))

    def test_duty_consistency(self):
        # one second of a 60 Hz modulation signal at 1 us resolution
        f, n, a = 5e3, 3, 0.8
        t = np.arange(0, 1.0, 1e-6)
        vm = a * np.sin(2 * math.pi * 60 * t)
        ins = np.abs(vm)[:, None] > carriers(t, f, n)
        duty = ins.mean(axis=0)
        analytic = np.mean(np.abs(vm))
        assert np.all(np.abs(duty - analytic) / analytic < 0.01)

    def test_kernel_matches_vectorised(self):
        t = np.linspace(0, 3e-4, 31)
        ref = carriers(t, 5e3, 4)
        for i, tk in enumerate(t):
            assert [K.carrier(tk, 5e3, k, 4) for k in range(4)] == pytest.approx(ref[i])


class TestAssignStates:
    def test_all_idle_fresh_latch(self):
        latch = ParallelLatch(4)
        st_ = assign_states([False] * 4, 0.3, latch)
        assert list(st_) == [S.BYPASS_PLUS, S.PARALLEL_MINUS, S.BYPASS_PLUS, S.PARALLEL_MINUS]

    def test_adjacency(self):
        st_ = assign_states([True, False, False], 0.5, ParallelLatch(3))
        assert list(st_) == [S.SERIES_PLUS, S.BYPASS_PLUS, S.PARALLEL_MINUS]

    def test_isolated_idle_is_bypass(self):
        st_ = assign_states([False, True, False], -0.5, ParallelLatch(3))
        assert list(st_) == [S.BYPASS_PLUS, S.SERIES_MINUS, S.BYPASS_PLUS]

    def test_edge_alternation(self):
        latch = ParallelLatch(2)
        seq = []
        for flags in ([False, False], [True, False], [False, False], [False, False],
                      [True, True], [False, False]):
            seq.append(assign_states(flags, 0.1, latch)[1])
        assert seq == [S.PARALLEL_MINUS, S.BYPASS_PLUS, S.PARALLEL_PLUS, S.PARALLEL_PLUS,
                       S.SERIES_PLUS, S.PARALLEL_MINUS]

    def test_cycle_mode(self):
        latch = ParallelLatch(2, mode="cycle")
        a = assign_states([False, False], 0.1, latch, t=0.5e-4, f_carrier=5e3)[1]
        b = assign_states([False, False], 0.1, latch, t=2.5e-4, f_carrier=5e3)[1]
        assert {a, b} == {S.PARALLEL_MINUS, S.PARALLEL_PLUS}

    @given(st.lists(st.booleans(), min_size=1, max_size=12), st.floats(-1, 1))
    def test_no_forbidden_assignments(self, flags, vm):
        states = assign_states(flags, vm, ParallelLatch(len(flags)))
        links = active_links(states)
        touched = [m for link in links for m in link]
        assert len(touched) == len(set(touched))
        for k, f in enumerate(flags):
            if f:
                assert states[k] in (S.SERIES_PLUS, S.SERIES_MINUS)
            else:
                assert states[k] not in (S.SERIES_PLUS, S.SERIES_MINUS)

    def _cycle_stats(self, n_cycles=10, n=3, a=0.8, f=5e3):
        bank = CarrierBank(n, f)
        latch = ParallelLatch(n)
        dt = 2e-6
        t = np.arange(0, n_cycles / 60, dt)
        plus = np.zeros(n)
        minus = np.zeros(n)
        toggles = np.zeros((n_cycles, n))
        prev = latch.bits.copy()
        for tk in t:
            vm = a * math.sin(2 * math.pi * 60 * tk)
            states = assign_states(psc_compare(vm, tk, bank), vm, latch)
            c = min(int(tk * 60), n_cycles - 1)
            toggles[c] += latch.bits != prev
            prev = latch.bits.copy()
            for k in range(1, n):
                plus[k] += states[k] == S.PARALLEL_PLUS
                minus[k] += states[k] == S.PARALLEL_MINUS
        return plus, minus, toggles

    def test_toggles_per_cycle_and_fairness(self):
        plus, minus, toggles = self._cycle_stats()
        assert np.all(toggles[:, 1:] >= 2)
        for k in range(1, 3):
            assert abs(plus[k] - minus[k]) / max(plus[k], minus[k]) < 0.2


class TestClamp:
    def test_examples(self):
        assert clamp_modulation(-1.2) == (-1.0, True)
        assert clamp_modulation(0.5) == (0.5, False)
        assert clamp_modulation(1.0) == (1.0, False)

    @given(st.floats(-10, 10))
    def test_bounded(self, x):
        v, sat = clamp_modulation(x)
        assert -1.0 <= v <= 1.0
        assert sat == (abs(x) > 1.0)
