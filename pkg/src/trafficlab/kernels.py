"""Open-loop car-following simulation kernels for the native IDM variants.

Two implementations of the same update rule:

* :func:`simulate_batch_numba` - scalar loops compiled with numba
* :func:`simulate_batch_numpy` - one vectorized step at a time across events

:func:`simulate_batch` picks numba unless ``TRAFFICLAB_DISABLE_NUMBA`` is set.
Both return the simulated spacing and speed as padded ``(M, Nmax)`` arrays
plus the (event, step) of the first non-finite acceleration, or ``(-1, -1)``.
"""

from __future__ import annotations

import math

import numpy as np

from trafficlab import _jit, models


@_jit.njit(cache=True, error_model="numpy")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@_jit.njit(cache=True, error_model="numpy")
def _desired_gap(p, v, lv):
    g = v * p[1] + v * (v - lv) / (2.0 * math.sqrt(p[2] * p[3]))
    if g < 0.0:
        g = 0.0
    return p[5] + g


@_jit.njit(cache=True, error_model="numpy")
def _accel(kind, p, s, v, lv):
    a_max = p[2]
    delta = p[4]
    if kind == 0:
        if s <= 0.0:
            return -a_max
        s_star = _desired_gap(p, v, lv)
        return a_max * (1.0 - (v / p[0]) ** delta - (s_star / s) ** 2)
    if kind == 1:
        s_star = _desired_gap(p, v, lv)
        z = (s - s_star) / max(s_star, 1.0)
        a_free = a_max * (1.0 - math.tanh(delta * (v / p[0] - 1.0)))
        a_int = -a_max * (1.0 - math.tanh(delta * z))
        w = _sigmoid(delta * (v - lv))
        return (1.0 - w) * a_free + w * a_int
    if kind == 2:
        err = s - _desired_gap(p, v, lv)
        x = err / max(1.0, abs(err))
        return a_max * _sigmoid(delta * x) - a_max / 2.0
    # kind == 3
    s_star = _desired_gap(p, v, lv)
    z = s - s_star
    if z < 0.0:
        return -a_max * (1.0 - (s / s_star) ** 2)
    return a_max * (1.0 - (v / p[0]) ** 4) * _sigmoid(delta * z)


@_jit.njit(cache=True, error_model="numpy")
def _simulate_numba(kind, p, s0, v0, lv, lengths, dt):
    m, n = lv.shape
    s_sim = np.zeros((m, n))
    v_sim = np.zeros((m, n))
    bad_event = -1
    bad_step = -1
    for i in range(m):
        s = s0[i]
        v = v0[i]
        s_sim[i, 0] = s
        v_sim[i, 0] = v
        for t in range(lengths[i] - 1):
            a = _accel(kind, p, s, v, lv[i, t])
            if not math.isfinite(a):
                if bad_event < 0:
                    bad_event = i
                    bad_step = t
                break
            v_next = v + a * dt
            if v_next < 0.0:
                v_next = 0.0
            s = s + lv[i, t] * dt - 0.5 * (v + v_next) * dt
            v = v_next
            s_sim[i, t + 1] = s
            v_sim[i, t + 1] = v
    return s_sim, v_sim, bad_event, bad_step


_NUMPY_ACCEL = {
    models.KERNEL_IDM_BASELINE: models.idm_accel,
    models.KERNEL_IDM_IMPROVED_FINAL: models.idm_improved_final_accel,
    models.KERNEL_IDM_V1: models.idm_v1_accel,
    models.KERNEL_IDM_V2: models.idm_v2_accel,
}


def simulate_batch_generic(accel, params, s0, v0, lv, lengths, dt):
    """Step-synchronous simulation across events for any vectorized ``accel``.

    ``accel(params, spacing, sv, lv)`` is called once per time step on the
    events still active at that step.
    """
    lv = np.asarray(lv, dtype=float)
    lengths = np.asarray(lengths, dtype=np.int64)
    m, n = lv.shape
    s_sim = np.zeros((m, n))
    v_sim = np.zeros((m, n))
    s = np.asarray(s0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    s_sim[:, 0] = s
    v_sim[:, 0] = v
    for t in range(n - 1):
        active = np.flatnonzero(lengths > t + 1)
        if active.size == 0:
            break
        lv_t = lv[active, t]
        with np.errstate(all="ignore"):
            a = np.asarray(accel(params, s[active], v[active], lv_t), dtype=float)
        a = np.broadcast_to(a, active.shape)
        finite = np.isfinite(a)
        if not finite.all():
            first = active[np.flatnonzero(~finite)[0]]
            return s_sim, v_sim, int(first), t
        v_next = np.maximum(0.0, v[active] + a * dt)
        s[active] = s[active] + lv_t * dt - 0.5 * (v[active] + v_next) * dt
        v[active] = v_next
        s_sim[active, t + 1] = s[active]
        v_sim[active, t + 1] = v_next
    return s_sim, v_sim, -1, -1


def simulate_batch_numpy(kind, params, s0, v0, lv, lengths, dt):
    return simulate_batch_generic(_NUMPY_ACCEL[kind], np.asarray(params, dtype=float), s0, v0, lv, lengths, dt)


def simulate_batch_numba(kind, params, s0, v0, lv, lengths, dt):
    if not _jit.HAVE_NUMBA:  # pragma: no cover
        raise RuntimeError("numba is not available")
    s_sim, v_sim, be, bs = _simulate_numba(
        int(kind),
        np.ascontiguousarray(params, dtype=np.float64),
        np.ascontiguousarray(s0, dtype=np.float64),
        np.ascontiguousarray(v0, dtype=np.float64),
        np.ascontiguousarray(lv, dtype=np.float64),
        np.ascontiguousarray(lengths, dtype=np.int64),
        float(dt),
    )
    return s_sim, v_sim, int(be), int(bs)


def simulate_batch(kind, params, s0, v0, lv, lengths, dt):
    if _jit.USE_NUMBA:
        return simulate_batch_numba(kind, params, s0, v0, lv, lengths, dt)
    return simulate_batch_numpy(kind, params, s0, v0, lv, lengths, dt)
