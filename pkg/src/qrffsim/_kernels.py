"""Sequential hot loops compiled with numba.

Two recurrences cannot be vectorized because each step depends on the
previous accepted/settled state: the non-paralyzable dead-time filter
(with afterpulse scheduling) and the slew-limited waveform level at each
toggle event.  Both are O(n) scans.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# detect_window status codes
DONE = 0
NEED_UNIFORMS = 1
PEND_OVERFLOW = 2
OUT_FULL = 3


@njit(cache=True, nogil=True)
def ramp_levels(times, carry_time, carry_level, carry_count, t_r, t_f):
    """Waveform level at each toggle event of a window.

    The output of the flip-flop slews linearly from its current level
    toward the target set by toggle parity: event g (0-based, global)
    starts a rise when g is even, a fall when g is odd.  ``carry_*``
    describe the last event before this window (count 0 = no event yet,
    waveform resting at 0).
    """
    n = times.shape[0]
    levels = np.empty(n)
    y = carry_level
    t_prev = carry_time
    g = carry_count
    for k in range(n):
        if g == 0:
            y = 0.0
        else:
            gap = times[k] - t_prev
            if (g - 1) % 2 == 0:
                if t_r > 0.0:
                    y = min(1.0, y + gap / t_r)
                else:
                    y = 1.0
            else:
                if t_f > 0.0:
                    y = max(0.0, y - gap / t_f)
                else:
                    y = 0.0
        levels[k] = y
        t_prev = times[k]
        g += 1
    return levels


@njit(cache=True, nogil=True)
def detect_window(cand_t, cand_f, t_end, tau_dead, ap_prob, trap,
                  uniforms, u_pos, last_accept, pend_t, n_pend,
                  out_t, out_f):
    """Apply dead time and afterpulsing to one window of arrivals.

    Walks the merged candidate stream and any pending afterpulse
    candidates in global time order.  An arrival closer than ``tau_dead``
    to the previous accepted detection is discarded and has no further
    effect.  Every accepted detection consumes two uniforms (when
    ``ap_prob`` > 0): a Bernoulli decision and, if it fires, an
    exponential release delay ``-trap * log1p(-u)``.

    Returns (i_next, n_out, u_pos, last_accept, n_pend, status).  The
    caller resumes from ``i_next`` after refilling uniforms or draining
    the output buffer; state arrays are mutated in place.
    """
    i = 0
    n_cand = cand_t.shape[0]
    n_out = 0
    cap = pend_t.shape[0]
    out_cap = out_t.shape[0]
    while True:
        t_next = 1e300
        src = -1
        p_idx = -1
        if i < n_cand:
            t_next = cand_t[i]
            src = 0
        for j in range(n_pend):
            if pend_t[j] < t_next:
                t_next = pend_t[j]
                src = 1
                p_idx = j
        if src == -1 or t_next > t_end:
            return i, n_out, u_pos, last_accept, n_pend, DONE
        if t_next - last_accept >= tau_dead:
            if n_out >= out_cap:
                return i, n_out, u_pos, last_accept, n_pend, OUT_FULL
            if ap_prob > 0.0 and u_pos + 2 > uniforms.shape[0]:
                return i, n_out, u_pos, last_accept, n_pend, NEED_UNIFORMS
            out_t[n_out] = t_next
            out_f[n_out] = cand_f[i] if src == 0 else np.uint8(2)
            n_out += 1
            last_accept = t_next
            if ap_prob > 0.0:
                u_b = uniforms[u_pos]
                u_d = uniforms[u_pos + 1]
                u_pos += 2
                if u_b < ap_prob:
                    if n_pend >= cap:
                        return i, n_out, u_pos, last_accept, n_pend, PEND_OVERFLOW
                    pend_t[n_pend] = t_next - trap * np.log1p(-u_d)
                    n_pend += 1
        if src == 0:
            i += 1
        else:
            n_pend -= 1
            pend_t[p_idx] = pend_t[n_pend]
