"""Hot loops for stability-capped Euler runs on sensing losses.

Stiff completion instances (tiny eigengaps, long low-rank valleys) need 1e8+
explicit steps; these kernels keep that affordable. numba compiles them when
available; otherwise the plain-Python definitions still run (slowly), so the
semantics never depend on numba being installed.

Status codes: 0 = step budget used up, 1 = gradient-norm stop, 2 = overflow
guard, 3 = horizon reached.
"""

from __future__ import annotations

import numpy as np

try:
    import numba as _numba
except ImportError:  # pragma: no cover - exercised only without numba
    _numba = None

HAVE_NUMBA = _numba is not None


def _capped_euler_w_py(w, xs, ys, safety, hnorm, n_steps, guard2, stop2, arm2,
                       armed, t_rem, capped):
    d = w.shape[0]
    m = xs.shape[0]
    g = np.zeros((d, d))
    rhs = np.zeros((d, d))
    t = 0.0
    for it in range(n_steps):
        for i in range(d):
            for j in range(d):
                g[i, j] = 0.0
        for k in range(m):
            r = -ys[k]
            for i in range(d):
                for j in range(d):
                    r += xs[k, i, j] * w[i, j]
            for i in range(d):
                for j in range(d):
                    g[i, j] += r * xs[k, i, j]
        tr = 0.0
        ng2 = 0.0
        for i in range(d):
            tr += w[i, i]
            for j in range(d):
                ng2 += g[i, j] * g[i, j]
        nr2 = 0.0
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    acc += w[i, k] * g[k, j] + g[i, k] * w[k, j]
                rhs[i, j] = -acc
                nr2 += acc * acc
        if not armed and nr2 >= arm2:
            armed = True
        if armed and stop2 > 0.0 and nr2 <= stop2:
            return it, 1, t, armed
        if capped:
            eta = safety / (2.0 * hnorm * tr + 2.0 * np.sqrt(ng2) + 1e-300)
        else:
            eta = safety
        hit_horizon = False
        if eta >= t_rem - t:
            eta = t_rem - t
            hit_horizon = True
        nw2 = 0.0
        for i in range(d):
            for j in range(d):
                w[i, j] += eta * rhs[i, j]
                nw2 += w[i, j] * w[i, j]
        t += eta
        if not np.isfinite(nw2) or nw2 >= guard2:
            return it + 1, 2, t, armed
        if hit_horizon:
            return it + 1, 3, t, armed
    return n_steps, 0, t, armed


def _capped_gd_u_py(u, xs, ys, safety, hnorm, n_steps, stop2, arm2, armed,
                    t_rem, guard2, capped):
    d, rr = u.shape
    m = xs.shape[0]
    w = np.zeros((d, d))
    gf = np.zeros((d, d))
    gu = np.zeros((d, rr))
    t = 0.0
    for it in range(n_steps):
        for i in range(d):
            for j in range(d):
                acc = 0.0
                for k in range(rr):
                    acc += u[i, k] * u[j, k]
                w[i, j] = acc
        for i in range(d):
            for j in range(d):
                gf[i, j] = 0.0
        for k in range(m):
            r = -ys[k]
            for i in range(d):
                for j in range(d):
                    r += xs[k, i, j] * w[i, j]
            for i in range(d):
                for j in range(d):
                    gf[i, j] += r * xs[k, i, j]
        tr = 0.0
        ngf2 = 0.0
        for i in range(d):
            tr += w[i, i]
            for j in range(d):
                ngf2 += gf[i, j] * gf[i, j]
        ngu2 = 0.0
        for i in range(d):
            for k in range(rr):
                acc = 0.0
                for j in range(d):
                    acc += gf[i, j] * u[j, k]
                gu[i, k] = acc
                ngu2 += acc * acc
        if not armed and ngu2 >= arm2:
            armed = True
        if armed and stop2 > 0.0 and ngu2 <= stop2:
            return it, 1, t, armed
        if capped:
            eta = safety / (2.0 * hnorm * tr + 2.0 * np.sqrt(ngf2) + 1e-300)
        else:
            eta = safety
        hit_horizon = False
        if eta >= t_rem - t:
            eta = t_rem - t
            hit_horizon = True
        nu2 = 0.0
        for i in range(d):
            for k in range(rr):
                u[i, k] -= eta * gu[i, k]
                nu2 += u[i, k] * u[i, k]
        t += eta
        if not np.isfinite(nu2) or nu2 * nu2 >= guard2:
            return it + 1, 2, t, armed
        if hit_horizon:
            return it + 1, 3, t, armed
    return n_steps, 0, t, armed


if HAVE_NUMBA:
    capped_euler_w = _numba.njit(cache=True, fastmath=True)(_capped_euler_w_py)
    capped_gd_u = _numba.njit(cache=True, fastmath=True)(_capped_gd_u_py)
else:  # pragma: no cover
    capped_euler_w = _capped_euler_w_py
    capped_gd_u = _capped_gd_u_py
