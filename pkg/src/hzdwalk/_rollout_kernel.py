"""Fused inner loop of one walking step: gait evaluation, PD torque, RK4
advance, guard localization, observation window and reward bookkeeping.

The kernel simulates up to ``max_steps`` fixed steps with the current Bezier
coefficients and gains held, returning to Python at an impact, a termination,
a divergence, or the step budget.  Log rows are written into a (n, 22) array
with columns (time, q x5, dq x5, u x4, tau, step_index, event, v_inst, v_d,
reward, stance_foot_x); the stance-foot column is filled by the caller.
"""

from __future__ import annotations

import numpy as np

from ._kernels import _forward_dyn, _rk4_step

# Chunk result codes.
CHUNK_BUDGET = 0
CHUNK_IMPACT = 1
CHUNK_FALL_TORSO = 2
CHUNK_FALL_HEIGHT = 3
CHUNK_DIVERGED = 4

LOG_COLS = 22
COL_TIME = 0
COL_Q = 1
COL_DQ = 6
COL_U = 11
COL_TAU = 15
COL_STEP = 16
COL_EVENT = 17
COL_VINST = 18
COL_VD = 19
COL_REWARD = 20
COL_SFX = 21

_B5 = np.array([1.0, 5.0, 10.0, 10.0, 5.0, 1.0])
_B4 = np.array([1.0, 4.0, 6.0, 4.0, 1.0])


def _walk_chunk(A, sgn, K, m, inr, g, swing_row, hip_row,
                q, dq, t0, alpha, p_begin, p_end, kp, kd, ulim,
                fx_arr, ton_arr, toff_arr,
                win_buf, win_idx, win_n, v_d, disc, gamma, ret,
                max_steps, dt, bisect_tol, divergence_limit,
                torso_lim, z_lo, z_hi,
                log, log_offset, step_index, u_out):
    """Advance up to max_steps; q/dq/win_buf/log/u_out mutated in place.

    Returns (code, n_logged, t, win_idx, win_n, disc, ret).  On CHUNK_IMPACT
    the state arrays hold the localized pre-impact state and n_logged counts
    only the fully completed (logged) steps before it.
    """
    span = p_end - p_begin
    cap = win_buf.shape[0]
    t = t0

    # swing-foot height at chunk entry
    a = A @ q
    h_prev = (swing_row * sgn) @ np.cos(a)

    for k in range(max_steps):
        # phase and desired outputs
        a = A @ q
        s = np.sin(a)
        c = np.cos(a)
        p_hip = hip_row @ s
        raw = (p_hip - p_begin) / span
        tau = min(max(raw, 0.0), 1.0)

        omt = 1.0 - tau
        q_des = np.zeros(4)
        dq_des = np.zeros(4)
        b5 = np.empty(6)
        for i in range(6):
            b5[i] = _B5[i] * tau ** i * omt ** (5 - i)
        for j in range(4):
            acc = 0.0
            for i in range(6):
                acc += alpha[j, i] * b5[i]
            q_des[j] = acc
        if 0.0 <= raw <= 1.0:
            jx = (hip_row * c) @ A
            tau_dot = (jx @ dq) / span
            for j in range(4):
                acc = 0.0
                for i in range(5):
                    acc += (alpha[j, i + 1] - alpha[j, i]) * _B4[i] \
                        * tau ** i * omt ** (4 - i)
                dq_des[j] = 5.0 * acc * tau_dot

        u = np.empty(4)
        for j in range(4):
            uj = kp * (q_des[j] - q[1 + j]) + kd * (dq_des[j] - dq[1 + j])
            u[j] = min(max(uj, -ulim), ulim)

        fx = 0.0
        for i in range(fx_arr.shape[0]):
            if ton_arr[i] <= t < toff_arr[i]:
                fx += fx_arr[i]

        qn, dqn = _rk4_step(A, sgn, K, m, inr, g, q, dq, u, fx, dt)

        big = 0.0
        for i in range(5):
            big = max(big, abs(qn[i]), abs(dqn[i]))
        if big > divergence_limit:
            return CHUNK_DIVERGED, k, t, win_idx, win_n, disc, ret

        an = A @ qn
        h_new = (swing_row * sgn) @ np.cos(an)
        if h_prev >= 0.0 > h_new:
            lo = 0.0
            hi = dt
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                qm, dqm = _rk4_step(A, sgn, K, m, inr, g, q, dq, u, fx, mid)
                am = A @ qm
                hm = (swing_row * sgn) @ np.cos(am)
                if hm >= 0.0:
                    lo = mid
                else:
                    hi = mid
            smid = 0.5 * (lo + hi)
            qe, dqe = _rk4_step(A, sgn, K, m, inr, g, q, dq, u, fx, smid)
            ae = A @ qe
            se = np.sin(ae)
            xe = swing_row @ se
            we = A @ dqe
            vye = (-(swing_row * sgn) * se) @ we
            if xe > 0.0 and vye < 0.0:
                for i in range(5):
                    q[i] = qe[i]
                    dq[i] = dqe[i]
                for j in range(4):
                    u_out[j] = u[j]
                return CHUNK_IMPACT, k, t + smid, win_idx, win_n, disc, ret

        for i in range(5):
            q[i] = qn[i]
            dq[i] = dqn[i]
        t += dt
        h_prev = h_new

        cn = np.cos(an)
        jxn = (hip_row * cn) @ A
        v_inst = jxn @ dq

        win_buf[win_idx] = v_inst
        win_idx = (win_idx + 1) % cap
        if win_n < cap:
            win_n += 1
        vbar = 0.0
        for i in range(win_n):
            vbar += win_buf[i]
        vbar /= win_n
        r = -((vbar - v_d) ** 2)
        ret += disc * r
        disc *= gamma

        sn = np.sin(an)
        p_hip_n = hip_row @ sn
        raw_n = (p_hip_n - p_begin) / span
        row = log_offset + k
        log[row, COL_TIME] = t
        for i in range(5):
            log[row, COL_Q + i] = q[i]
            log[row, COL_DQ + i] = dq[i]
        for j in range(4):
            log[row, COL_U + j] = u[j]
        log[row, COL_TAU] = min(max(raw_n, 0.0), 1.0)
        log[row, COL_STEP] = step_index
        log[row, COL_EVENT] = 0.0
        log[row, COL_VINST] = v_inst
        log[row, COL_VD] = v_d
        log[row, COL_REWARD] = r

        if abs(q[0]) >= torso_lim:
            return CHUNK_FALL_TORSO, k + 1, t, win_idx, win_n, disc, ret
        z = (hip_row * sgn) @ cn
        if not (z_lo < z < z_hi):
            return CHUNK_FALL_HEIGHT, k + 1, t, win_idx, win_n, disc, ret

    return CHUNK_BUDGET, max_steps, t, win_idx, win_n, disc, ret


try:  # pragma: no cover
    from numba import njit

    _walk_chunk = njit(cache=True)(_walk_chunk)
except ImportError:  # pragma: no cover
    pass

walk_chunk = _walk_chunk
