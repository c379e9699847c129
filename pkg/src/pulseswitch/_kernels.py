"""Compiled integration kernels.

One driver advances ``x' = f(x, u, p)`` with ``u`` held constant over
``[t0, t1]``.  Two step schemes are available: Dormand-Prince 5(4) for
non-stiff fields and TR-BDF2 (L-stable, second order, with a third-order
embedded estimate) for stiff ones.  Both share the PI step controller, the
equilibrium-ball stop test and the order-face event locator.

The field ``f`` is any numba-compiled function with signature
``f(x, u, p) -> dx``; each distinct ``f`` triggers one specialisation.
"""

import numpy as np
from numba import njit

DOPRI5 = 0
TRBDF2 = 1

# driver status codes
REACHED_END = 0
HIT_EQUILIBRIUM = 1
HIT_EVENT = 2
STALLED = 3
STEP_COLLAPSE = -1
NON_FINITE = -2

# Dormand-Prince 5(4) tableau
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                           49.0 / 176.0, -5103.0 / 18656.0)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)

# TR-BDF2 as a three-stage ESDIRK: c = (0, 2d, 1)
TB_D = 1.0 - np.sqrt(2.0) / 2.0
TB_W = (1.0 - TB_D) / 2.0
TB_E1 = (1.0 - TB_W) / 3.0 - TB_W
TB_E2 = (3.0 * TB_W + 1.0) / 3.0 - TB_W
TB_E3 = TB_D / 3.0 - TB_D

PI_BETA = 0.04
SAFETY = 0.9
MAX_NEWTON = 10


@njit(cache=True, nogil=True)
def _err_norm(e, x, xn, rtol, atol):
    s = 0.0
    for i in range(e.size):
        sc = atol + rtol * max(abs(x[i]), abs(xn[i]))
        s += (e[i] / sc) ** 2
    return np.sqrt(s / e.size)


@njit(cache=True, nogil=True)
def _all_finite(x):
    for i in range(x.size):
        if not np.isfinite(x[i]):
            return False
    return True


@njit(cache=True, nogil=True)
def _max_abs(x):
    m = 0.0
    for i in range(x.size):
        if abs(x[i]) > m:
            m = abs(x[i])
    return m


@njit(nogil=True)
def _dopri_step(f, x, k1, u, p, h, rtol, atol):
    k2 = f(x + h * A21 * k1, u, p)
    k3 = f(x + h * (A31 * k1 + A32 * k2), u, p)
    k4 = f(x + h * (A41 * k1 + A42 * k2 + A43 * k3), u, p)
    k5 = f(x + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), u, p)
    k6 = f(x + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), u, p)
    xn = x + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
    k7 = f(xn, u, p)
    e = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
    if not (_all_finite(xn) and _all_finite(k7)):
        return xn, k7, np.inf
    return xn, k7, _err_norm(e, x, xn, rtol, atol)


@njit(nogil=True)
def _jacobian(f, x, u, p, fx):
    n = x.size
    J = np.empty((n, n))
    for j in range(n):
        hj = 1.4901161193847656e-08 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += hj
        J[:, j] = (f(xp, u, p) - fx) / hj
    return J


@njit(nogil=True)
def _newton_stage(f, x, base, u, p, dh, Minv, z, rtol, atol):
    """Solve z = base + dh * f(x + z) by simplified Newton."""
    n = x.size
    for _ in range(MAX_NEWTON):
        fz = f(x + z, u, p)
        r = z - base - dh * fz
        dz = -(Minv @ r)
        z = z + dz
        s = 0.0
        for i in range(n):
            sc = atol + rtol * abs(x[i] + z[i])
            s += (dz[i] / sc) ** 2
        s = np.sqrt(s / n)
        if not np.isfinite(s):
            return z, False
        if s < 1e-3:
            return z, True
    return z, False


@njit(nogil=True)
def _trbdf2_step(f, x, f1, u, p, h, rtol, atol):
    n = x.size
    J = _jacobian(f, x, u, p, f1)
    M = np.eye(n) - (TB_D * h) * J
    Minv = np.linalg.inv(M)
    dh = TB_D * h
    z2, ok = _newton_stage(f, x, dh * f1, u, p, dh, Minv, 2.0 * dh * f1, rtol, atol)
    if not ok:
        return x, f1, np.inf
    f2 = f(x + z2, u, p)
    base3 = (TB_W * h) * (f1 + f2)
    z3, ok = _newton_stage(f, x, base3, u, p, dh, Minv, base3 + dh * f2, rtol, atol)
    if not ok:
        return x, f1, np.inf
    xn = x + z3
    f3 = f(xn, u, p)
    if not (_all_finite(xn) and _all_finite(f3)):
        return xn, f3, np.inf
    e = Minv @ (h * (TB_E1 * f1 + TB_E2 * f2 + TB_E3 * f3))
    return xn, f3, _err_norm(e, x, xn, rtol, atol)


STEPPERS = {DOPRI5: (_dopri_step, 5.0), TRBDF2: (_trbdf2_step, 3.0)}


@njit(cache=True, nogil=True)
def _stop_index(x, fx, eq, radius, resid, stall):
    """Index of the equilibrium ball entered, -2 when stalled elsewhere, else -1."""
    fn = _max_abs(fx)
    for k in range(eq.shape[0]):
        d2 = 0.0
        for i in range(x.size):
            d2 += (x[i] - eq[k, i]) ** 2
        if d2 <= radius[k] ** 2 and fn <= resid[k]:
            return k
    if stall > 0.0 and fn <= stall * (1.0 + _max_abs(x)):
        return -2
    return -1


@njit(cache=True, nogil=True)
def _event_value(x, corner, signs, sigma, eps):
    # >= 0 exactly when sigma * P (corner - x) + eps >= 0 componentwise
    g = np.inf
    for i in range(x.size):
        v = sigma * signs[i] * (corner[i] - x[i]) + eps
        if v < g:
            g = v
    return g


@njit(cache=True, nogil=True)
def _grow(times, states, m):
    if m < times.size:
        return times, states
    nt = np.empty(2 * times.size)
    ns = np.empty((2 * times.size, states.shape[1]))
    nt[:m] = times[:m]
    ns[:m] = states[:m]
    return nt, ns


@njit(nogil=True)
def drive(step, order, f, x0, u, p, t0, t1, h0, rtol, atol, hmax, record, max_steps,
          eq, radius, resid, stall,
          ev_on, ev_corner, ev_signs, ev_sigma, ev_eps, ev_tres):
    """Advance from t0 towards t1; see module docstring.

    Returns (status, index, t, x, h_next, times, states, n_steps).
    """
    n = x0.size
    x = x0.copy()
    t = t0
    fx = f(x, u, p)
    cap = 64 if record else 2
    times = np.empty(cap)
    states = np.empty((cap, n))
    times[0] = t
    states[0] = x
    m = 1
    if not (_all_finite(x) and _all_finite(fx)):
        return NON_FINITE, -1, t, x, h0, times[:m], states[:m], 0

    if eq.shape[0] > 0 or stall > 0.0:
        k = _stop_index(x, fx, eq, radius, resid, stall)
        if k >= 0:
            return HIT_EQUILIBRIUM, k, t, x, h0, times[:m], states[:m], 0
        if k == -2:
            return STALLED, -1, t, x, h0, times[:m], states[:m], 0
    g_old = _event_value(x, ev_corner, ev_signs, ev_sigma, ev_eps) if ev_on else 0.0

    span = t1 - t0
    hmax = min(hmax, span)
    h = h0
    if h <= 0.0:
        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(x[i])
            d0 += (x[i] / sc) ** 2
            d1 += (fx[i] / sc) ** 2
        d0 = np.sqrt(d0 / n)
        d1 = np.sqrt(d1 / n)
        h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, hmax)

    err_old = 1e-4
    rejected = False
    n_steps = 0
    while t < t1:
        if n_steps >= max_steps:
            return STEP_COLLAPSE, -1, t, x, h, times[:m], states[:m], n_steps
        last = t + h >= t1 - 1e-15 * max(1.0, abs(t1))
        if last:
            h = t1 - t
        elif h < 1e-14 * max(1.0, abs(t)):
            # accepted steps too short to move t (finite-time blow-up)
            return STEP_COLLAPSE, -1, t, x, h, times[:m], states[:m], n_steps
        xn, fn, err = step(f, x, fx, u, p, h, rtol, atol)
        if err <= 1.0:
            t_new = t1 if last else t + h
            if ev_on:
                g_new = _event_value(xn, ev_corner, ev_signs, ev_sigma, ev_eps)
                if g_old < 0.0 and g_new >= 0.0:
                    lo = 0.0
                    hi = h
                    xe = xn
                    while hi - lo > ev_tres:
                        mid = 0.5 * (lo + hi)
                        xm, _fm, _em = step(f, x, fx, u, p, mid, rtol, atol)
                        if _event_value(xm, ev_corner, ev_signs, ev_sigma, ev_eps) >= 0.0:
                            hi = mid
                            xe = xm
                        else:
                            lo = mid
                    if hi < h:
                        xe, _fm, _em = step(f, x, fx, u, p, hi, rtol, atol)
                    times, states = _grow(times, states, m)
                    times[m] = t + hi
                    states[m] = xe
                    m += 1
                    return HIT_EVENT, -1, t + hi, xe, h, times[:m], states[:m], n_steps + 1
                g_old = g_new
            t = t_new
            x = xn
            fx = fn
            n_steps += 1
            if record or last:
                times, states = _grow(times, states, m)
                times[m] = t
                states[m] = x
                m += 1
            if eq.shape[0] > 0 or stall > 0.0:
                k = _stop_index(x, fx, eq, radius, resid, stall)
                if k >= 0 or k == -2:
                    if not record and not last:
                        times, states = _grow(times, states, m)
                        times[m] = t
                        states[m] = x
                        m += 1
                    status = HIT_EQUILIBRIUM if k >= 0 else STALLED
                    return status, k, t, x, h, times[:m], states[:m], n_steps
            if err == 0.0:
                fac = 5.0
            else:
                fac = SAFETY * err ** (-(1.0 / order - 0.75 * PI_BETA)) * err_old ** PI_BETA
                fac = min(5.0, max(0.2, fac))
            if rejected:
                fac = min(fac, 1.0)
            err_old = max(err, 1e-4)
            rejected = False
            h = min(h * fac, hmax)
        else:
            if np.isfinite(err):
                fac = max(0.2, SAFETY * err ** (-1.0 / order))
            else:
                fac = 0.25
            h = h * fac
            rejected = True
            if h < 1e-14 * max(1.0, abs(t)):
                status = NON_FINITE if not np.isfinite(err) else STEP_COLLAPSE
                return status, -1, t, x, h, times[:m], states[:m], n_steps
    return REACHED_END, -1, t, x, h, times[:m], states[:m], n_steps
