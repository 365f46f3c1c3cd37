"""Compiled kernels shared by the public API and the co-simulation loop.

Everything here works on scalars and flat float64 arrays so the same code
runs under numba in the inner loop and from Python for unit-level calls.
The public modules wrap these with dataclasses and argument checking.

Sign conventions (used throughout the package):

* ``i_o`` is the grid current flowing *into* the converter arm.
* ``L_g di/dt = v_g - v_arm - R_g i``.
* An inserted module with sign ``s`` sees ``C dv/dt = s * i_o``.
* ``epsilon > 0`` always means the converter exports active power.
"""

import math

import numpy as np
from numba import njit

# module interconnection states
SERIES_PLUS = 0
SERIES_MINUS = 1
PARALLEL_PLUS = 2
PARALLEL_MINUS = 3
BYPASS_PLUS = 4
BYPASS_MINUS = 5
PASSIVE = 6

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi

# latch granularity
LATCH_EDGE = 0
LATCH_CYCLE = 1

# event actions
EV_SET_IREF = 0
EV_SET_AM = 1
EV_TOGGLE_LEADING = 2
EV_GRID_SCALE = 3
EV_SET_VCAP = 4

# controller parameter vector layout
CP_TS = 0
CP_KP_I = 1
CP_KI_I = 2
CP_KR_I = 3
CP_KP_V = 4
CP_KI_V = 5
CP_OUTER_DIV = 6
CP_ALPHA = 7
CP_EPS_MAX = 8
CP_W_NOM = 9
CP_PLL_KP = 10
CP_PLL_KI = 11
CP_SOGI_K = 12
CP_IDEAL_PLL = 13
CP_W_BOUND = 14
CP_OUTER_ON = 15
CP_EPS_FIXED = 16
CP_SIZE = 17

# controller state vector layout
CS_THETA = 0
CS_PLL_INT = 1
CS_SOGI_V = 2
CS_SOGI_Q = 3
CS_OMEGA = 4
CS_INNER_INT = 5
CS_RES_X1 = 6
CS_RES_X2 = 7
CS_IBAR = 8
CS_QBAR = 9
CS_OUTER_INT = 10
CS_EPS = 11
CS_VM = 12
CS_SAT = 13
CS_AHAT = 14
CS_IREF_AMP = 15
CS_AM_TARGET = 16
CS_LEADING = 17
CS_COUNTER = 18
CS_IREF = 19
CS_UNLOCKED = 20
CS_SIZE = 21


# --------------------------------------------------------------------------
# circuit


@njit(cache=True)
def passive_polarity(i_o):
    if i_o < 0.0:
        return -1.0
    return 1.0


@njit(cache=True)
def insertion_sign(state, i_o):
    if state == SERIES_PLUS:
        return 1.0
    if state == SERIES_MINUS:
        return -1.0
    if state == PASSIVE:
        return passive_polarity(i_o)
    return 0.0


@njit(cache=True)
def conduction_drop(state, i_o, diode_drop, device_resistance):
    if i_o == 0.0:
        return 0.0
    r = device_resistance
    if state == SERIES_PLUS or state == SERIES_MINUS:
        # two parallel transistor-diode branches
        r = 0.5 * device_resistance
    sgn = 1.0 if i_o > 0.0 else -1.0
    return sgn * (diode_drop + abs(i_o) * r)


@njit(cache=True)
def arm_voltage(states, cap_voltages, i_o, diode_drop, device_resistance):
    v = 0.0
    for n in range(states.shape[0]):
        v += insertion_sign(states[n], i_o) * cap_voltages[n]
        v += conduction_drop(states[n], i_o, diode_drop, device_resistance)
    return v


@njit(cache=True)
def link_currents(states, cap_voltages, diode_drop, loop_resistance, out):
    """Fill ``out[k-1]`` with the current of the link between modules k-1 and k.

    Values are magnitudes in the direction the state permits; the direction
    itself is implied by the state of module k.
    """
    corridor = 2.0 * diode_drop
    for k in range(1, states.shape[0]):
        st = states[k]
        cur = 0.0
        if st == PARALLEL_MINUS:
            dv = cap_voltages[k - 1] - cap_voltages[k] - corridor
            if dv > 0.0:
                cur = dv / loop_resistance
        elif st == PARALLEL_PLUS:
            dv = cap_voltages[k] - cap_voltages[k - 1] - corridor
            if dv > 0.0:
                cur = dv / loop_resistance
        out[k - 1] = cur


@njit(cache=True)
def plant_step(cap_voltages, capacitance, i_o, states, v_g, l_g, r_g,
               diode_drop, device_resistance, loop_resistance, dt,
               links, energy):
    """Advance the plant by one step in place; return the new grid current.

    Semi-implicit Euler: the inductor current is updated from the old
    capacitor voltages, then the capacitors integrate the new current.
    ``energy`` accumulates [grid_in, dissipated, throughput, violations].
    """
    n = states.shape[0]
    link_currents(states, cap_voltages, diode_drop, loop_resistance, links)
    v_arm = arm_voltage(states, cap_voltages, i_o, diode_drop, device_resistance)
    i_new = i_o + dt / l_g * (v_g - v_arm - r_g * i_o)
    i_mid = 0.5 * (i_o + i_new)

    drops = 0.0
    for k in range(n):
        drops += conduction_drop(states[k], i_o, diode_drop, device_resistance)

    old = cap_voltages.copy()
    for k in range(n):
        s = insertion_sign(states[k], i_o)
        cap_voltages[k] += dt / capacitance[k] * s * i_new
    link_loss = 0.0
    corridor = 2.0 * diode_drop
    for k in range(1, n):
        cur = links[k - 1]
        st = states[k]
        if st == PARALLEL_MINUS:
            src = k - 1
            dst = k
        elif st == PARALLEL_PLUS:
            src = k
            dst = k - 1
        else:
            continue
        if cur < 0.0 or (cur > 0.0 and old[src] - old[dst] <= corridor):
            energy[3] += 1.0
        if cur != 0.0:
            cap_voltages[src] -= dt / capacitance[src] * cur
            cap_voltages[dst] += dt / capacitance[dst] * cur

    # discretisation-consistent dissipation (midpoint capacitor voltages)
    for k in range(1, n):
        cur = links[k - 1]
        if cur == 0.0:
            continue
        st = states[k]
        if st == PARALLEL_MINUS:
            src = k - 1
            dst = k
        else:
            src = k
            dst = k - 1
        vs = 0.5 * (old[src] + cap_voltages[src])
        vd = 0.5 * (old[dst] + cap_voltages[dst])
        link_loss += cur * (vs - vd)

    energy[0] += dt * v_g * i_mid
    energy[1] += dt * ((r_g * i_o + drops) * i_mid + link_loss)
    energy[2] += dt * abs(v_g * i_mid)
    return i_new


@njit(cache=True)
def stored_energy(cap_voltages, capacitance, i_o, l_g):
    e = 0.5 * l_g * i_o * i_o
    for k in range(cap_voltages.shape[0]):
        e += 0.5 * capacitance[k] * cap_voltages[k] * cap_voltages[k]
    return e


# --------------------------------------------------------------------------
# modulation


@njit(cache=True)
def carrier(t, f_carrier, k, n):
    """Unipolar triangle in [0, 1] for carrier k of n (offset 2*pi*k/n)."""
    x = t * f_carrier + k / n
    x -= math.floor(x)
    return 1.0 - abs(2.0 * x - 1.0)


@njit(cache=True)
def psc_compare(v_m, t, f_carrier, flags):
    n = flags.shape[0]
    m = abs(v_m)
    for k in range(n):
        # full modulation inserts everything, including at the carrier peak
        flags[k] = m >= 1.0 or m > carrier(t, f_carrier, k, n)


@njit(cache=True)
def assign_states(flags, v_m, latch_bit, latch_last, latch_mode, period_parity,
                  states, eligible):
    """Map insertion flags to module states, pairing idle neighbours.

    Chains of non-inserted modules are split into disjoint pairs starting at
    the lower index; link k joins modules k-1 and k and is driven by the
    state of module k. ``latch_bit[k]`` alternates the permitted direction.
    """
    n = flags.shape[0]
    series = SERIES_PLUS if v_m >= 0.0 else SERIES_MINUS
    for k in range(n):
        eligible[k] = False
    k = 0
    while k < n:
        if flags[k]:
            states[k] = series
            k += 1
        elif k + 1 < n and not flags[k + 1]:
            states[k] = BYPASS_PLUS
            eligible[k + 1] = True
            k += 2
        else:
            states[k] = BYPASS_PLUS
            k += 1
    for j in range(1, n):
        e = eligible[j]
        if latch_mode == LATCH_EDGE:
            if e and not latch_last[j]:
                latch_bit[j] = not latch_bit[j]
            minus = latch_bit[j]
        else:
            minus = period_parity == 0
        latch_last[j] = e
        if e:
            states[j] = PARALLEL_MINUS if minus else PARALLEL_PLUS


# --------------------------------------------------------------------------
# control primitives


@njit(cache=True)
def clamp(x, lo, hi):
    if x > hi:
        return hi, True
    if x < lo:
        return lo, True
    return x, False


@njit(cache=True)
def pi_step(error, kp, ki, ts, lo, hi, integrator, anti_windup):
    """Clamped PI with conditional integration; returns (output, integrator)."""
    trial = integrator + ki * error * ts
    u = kp * error + trial
    if anti_windup and ((u > hi and error > 0.0) or (u < lo and error < 0.0)):
        trial = integrator
        u = kp * error + trial
    out, _ = clamp(u, lo, hi)
    return out, trial


@njit(cache=True)
def resonant_step(error, kr, omega, ts, x1, x2, freeze):
    """Undamped generalized integrator kr*s/(s^2+w^2), symplectic update."""
    drive = 0.0 if freeze else kr * error
    x1 = x1 + ts * (drive - omega * x2)
    x2 = x2 + ts * omega * x1
    return x1, x2


@njit(cache=True)
def wrap_angle(theta):
    return theta - TWO_PI * math.floor(theta / TWO_PI)


@njit(cache=True)
def sogi_pll_step(v_in, ts, w_nom, kp, ki, sogi_k, theta, integ, v_al, v_q, omega):
    """One sample of a SOGI quadrature generator plus SRF-style PI lock.

    With ``v_in = V sin(theta_g)`` the SOGI settles at v_al = V sin(theta_g)
    and v_q = -V cos(theta_g); the detector output is sin(theta_g - theta).
    """
    # propagate the estimate to this sample before comparing
    theta = wrap_angle(theta + omega * ts)
    v_q = v_q + ts * omega * v_al
    v_al = v_al + ts * omega * (sogi_k * (v_in - v_al) - v_q)
    amp = math.sqrt(v_al * v_al + v_q * v_q)
    pd = 0.0
    if amp > 1e-12:
        pd = (v_al * math.cos(theta) + v_q * math.sin(theta)) / amp
    integ = integ + ki * pd * ts
    omega = w_nom + kp * pd + integ
    return theta, integ, v_al, v_q, omega


@njit(cache=True)
def current_reference(theta_g, amp, eps, leading):
    if leading:
        return amp * math.sin(theta_g + HALF_PI + eps)
    return amp * math.sin(theta_g - HALF_PI - eps)


@njit(cache=True)
def iq_update(v_m, theta, alpha, i_bar, q_bar):
    i_k = v_m * math.cos(theta)
    q_k = v_m * math.sin(theta)
    i_bar = (1.0 - alpha) * i_bar + alpha * i_k
    q_bar = (1.0 - alpha) * q_bar + alpha * q_k
    return i_bar, q_bar


@njit(cache=True)
def amplitude_from_iq(i_bar, q_bar):
    return 2.0 * math.sqrt(i_bar * i_bar + q_bar * q_bar)


@njit(cache=True)
def controller_update(v_g_sample, i_o_sample, theta_ideal, cp, cs):
    """One inner-loop period of the dual-loop controller (state in ``cs``).

    Inputs are the grid-voltage and output-current samples only; the ideal
    phase is consulted only when the PLL bypass flag is set.
    """
    ts = cp[CP_TS]
    if cp[CP_IDEAL_PLL] != 0.0:
        cs[CS_THETA] = wrap_angle(theta_ideal)
        cs[CS_OMEGA] = cp[CP_W_NOM]
    else:
        th, integ, v_al, v_q, om = sogi_pll_step(
            v_g_sample, ts, cp[CP_W_NOM], cp[CP_PLL_KP], cp[CP_PLL_KI],
            cp[CP_SOGI_K], cs[CS_THETA], cs[CS_PLL_INT], cs[CS_SOGI_V],
            cs[CS_SOGI_Q], cs[CS_OMEGA])
        cs[CS_THETA] = th
        cs[CS_PLL_INT] = integ
        cs[CS_SOGI_V] = v_al
        cs[CS_SOGI_Q] = v_q
        cs[CS_OMEGA] = om
        cs[CS_UNLOCKED] = 1.0 if abs(om - cp[CP_W_NOM]) > cp[CP_W_BOUND] else 0.0
    theta = cs[CS_THETA]

    i_ref = current_reference(theta, cs[CS_IREF_AMP], cs[CS_EPS], cs[CS_LEADING] != 0.0)
    cs[CS_IREF] = i_ref

    # inner loop: a larger current than commanded needs more arm voltage
    err = i_o_sample - i_ref
    u = cp[CP_KP_I] * err + cs[CS_INNER_INT] + cs[CS_RES_X1]
    pushing = (u > 1.0 and err > 0.0) or (u < -1.0 and err < 0.0)
    if not pushing:
        cs[CS_INNER_INT] += cp[CP_KI_I] * err * ts
    x1, x2 = resonant_step(err, cp[CP_KR_I], cs[CS_OMEGA], ts,
                           cs[CS_RES_X1], cs[CS_RES_X2], pushing)
    cs[CS_RES_X1] = x1
    cs[CS_RES_X2] = x2
    u = cp[CP_KP_I] * err + cs[CS_INNER_INT] + cs[CS_RES_X1]
    v_m, sat = clamp(u, -1.0, 1.0)
    cs[CS_VM] = v_m
    cs[CS_SAT] = 1.0 if sat else 0.0

    ib, qb = iq_update(v_m, theta, cp[CP_ALPHA], cs[CS_IBAR], cs[CS_QBAR])
    cs[CS_IBAR] = ib
    cs[CS_QBAR] = qb
    a_hat = amplitude_from_iq(ib, qb)
    cs[CS_AHAT] = a_hat

    # outer loop at a decimated rate
    cs[CS_COUNTER] += 1.0
    div = cp[CP_OUTER_DIV]
    if cs[CS_COUNTER] >= div:
        cs[CS_COUNTER] = 0.0
        if cp[CP_OUTER_ON] != 0.0:
            e_m = cs[CS_AM_TARGET] - a_hat
            eps, integ = pi_step(e_m, cp[CP_KP_V], cp[CP_KI_V], ts * div,
                                 -cp[CP_EPS_MAX], cp[CP_EPS_MAX],
                                 cs[CS_OUTER_INT], True)
            cs[CS_OUTER_INT] = integ
            cs[CS_EPS] = eps
        else:
            cs[CS_EPS] = cp[CP_EPS_FIXED]
    return v_m


# --------------------------------------------------------------------------
# co-simulation loop


@njit(cache=True)
def simulate(n_steps, dt, ctrl_div, rec_div,
             grid_v, grid_w, grid_phase, l_g, r_g,
             capacitance, cap_voltages, i_o,
             diode_drop, device_resistance, loop_resistance,
             f_carrier, latch_mode,
             cp, cs,
             ev_step, ev_action, ev_value, ev_module,
             rec, rec_vsm, energy, sat_cycles):
    """Run the closed loop for ``n_steps`` plant steps.

    ``energy`` holds [grid_in, dissipated, throughput, violations, injected].
    ``rec`` columns: t, v_g, i_o, i_ref, v_arm(avg), v_m, a_hat, eps, sat,
    level, theta, v_arm_sq(avg). The two averaged columns are box-car means
    over the plant steps of each record interval. Returns (status, final_i_o, rows_written, bad_step) where
    status 0 = ok and 1 = non-finite state.
    """
    n = cap_voltages.shape[0]
    flags = np.zeros(n, dtype=np.bool_)
    states = np.full(n, BYPASS_PLUS, dtype=np.int64)
    eligible = np.zeros(n, dtype=np.bool_)
    latch_bit = np.zeros(n, dtype=np.bool_)
    latch_last = np.zeros(n, dtype=np.bool_)
    links = np.zeros(max(n - 1, 1), dtype=np.float64)
    v_prev = np.empty(n, dtype=np.float64)
    scale = 1.0
    ev = 0
    n_ev = ev_step.shape[0]
    row = 0
    v_arm_acc = 0.0
    v_arm_sq = 0.0
    v_m = cs[CS_VM]
    grid_period = TWO_PI / grid_w
    cycle_idx = -1
    cycle_sat = False
    run_len = 0
    for step in range(n_steps):
        t = step * dt
        while ev < n_ev and ev_step[ev] == step:
            a = ev_action[ev]
            if a == EV_SET_IREF:
                cs[CS_IREF_AMP] = ev_value[ev]
            elif a == EV_SET_AM:
                cs[CS_AM_TARGET] = ev_value[ev]
            elif a == EV_TOGGLE_LEADING:
                cs[CS_LEADING] = 0.0 if cs[CS_LEADING] != 0.0 else 1.0
            elif a == EV_GRID_SCALE:
                scale = ev_value[ev]
            elif a == EV_SET_VCAP:
                m = ev_module[ev]
                # energy injected by the event, kept out of the plant balance
                energy[4] += 0.5 * capacitance[m] * (ev_value[ev] ** 2 - cap_voltages[m] ** 2)
                cap_voltages[m] = ev_value[ev]
            ev += 1
        theta_g = grid_w * t + grid_phase
        v_g = scale * grid_v * math.sin(theta_g)
        if step % ctrl_div == 0:
            v_m = controller_update(v_g, i_o, theta_g, cp, cs)
            # saturation bookkeeping per grid cycle
            c = int(t / grid_period)
            if c != cycle_idx:
                if cycle_idx >= 0:
                    if cycle_sat:
                        run_len += 1
                        if run_len > sat_cycles[0]:
                            sat_cycles[0] = run_len
                    else:
                        run_len = 0
                cycle_idx = c
                cycle_sat = False
            if cs[CS_SAT] != 0.0:
                cycle_sat = True
        period_parity = int(t * f_carrier) % 2
        psc_compare(v_m, t, f_carrier, flags)
        assign_states(flags, v_m, latch_bit, latch_last, latch_mode,
                      period_parity, states, eligible)
        if step % rec_div == 0:
            if row > 0:
                rec[row - 1, 4] = v_arm_acc / rec_div
                rec[row - 1, 11] = v_arm_sq / rec_div
            v_arm_acc = 0.0
            v_arm_sq = 0.0
            level = 0.0
            for k in range(n):
                level += insertion_sign(states[k], i_o)
            rec[row, 0] = t
            rec[row, 1] = v_g
            rec[row, 2] = i_o
            rec[row, 3] = cs[CS_IREF]
            rec[row, 5] = v_m
            rec[row, 6] = cs[CS_AHAT]
            rec[row, 7] = cs[CS_EPS]
            rec[row, 8] = cs[CS_SAT]
            rec[row, 9] = level
            rec[row, 10] = cs[CS_THETA]
            for k in range(n):
                rec_vsm[row, k] = cap_voltages[k]
            row += 1
        va = arm_voltage(states, cap_voltages, i_o, diode_drop, device_resistance)
        v_arm_acc += va
        v_arm_sq += va * va
        for k in range(n):
            v_prev[k] = cap_voltages[k]
        i_prev = i_o
        i_o = plant_step(cap_voltages, capacitance, i_o, states, v_g, l_g, r_g,
                         diode_drop, device_resistance, loop_resistance, dt,
                         links, energy)
        finite = math.isfinite(i_o)
        for k in range(n):
            finite = finite and math.isfinite(cap_voltages[k])
        if not finite:
            # hand back the last finite state
            for k in range(n):
                cap_voltages[k] = v_prev[k]
            return 1, i_prev, row, step
    if row > 0:
        rec[row - 1, 4] = v_arm_acc / rec_div
        rec[row - 1, 11] = v_arm_sq / rec_div
    if cycle_sat:
        run_len += 1
        if run_len > sat_cycles[0]:
            sat_cycles[0] = run_len
    return 0, i_o, row, -1
