# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled planar-rotor path kernels; same contract as _kernels_py.rotor_chunk."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, fabs, hypot

cnp.import_array()


cdef inline double _pot(double[:] p, double x, double y, double u, double w) nogil:
    return p[0] + p[1] * (x * x + y * y) + p[2] * (u * u + w * w) + p[3] * (x * u + y * w)


def rotor_chunk(int mode, s0, double[:, :, :] dW, double dt, double mu2k, double k,
                double[:] pot, double chart_radius, bint record):
    cdef Py_ssize_t n = dW.shape[0], N = dW.shape[1], i, t
    cdef int dim = 5 if mode == 1 else 4
    cdef double s = sqrt(mu2k)
    cdef double[:] s0v = np.ascontiguousarray(s0, dtype=np.float64)
    out_np = np.empty((n, dim))
    fail_np = np.zeros(n, dtype=bool)
    fstep_np = np.full(n, -1, dtype=np.int64)
    logw_np = np.zeros(n)
    closed_np = np.zeros(n)
    vint_np = np.zeros(n)
    er_np = np.zeros(n)
    ei_np = np.zeros(n)
    states_np = np.empty((n, N + 1, dim)) if record else np.empty((0, 0, 0))
    cdef double[:, :] out = out_np
    cdef cnp.uint8_t[:] fail = fail_np.view(np.uint8)
    cdef long long[:] fstep = fstep_np
    cdef double[:] logw = logw_np, closed = closed_np, vint = vint_np, er = er_np, ei = ei_np
    cdef double[:, :, :] states = states_np
    cdef double x, y, u, w, a, xn, yn, un, wn, an, d, d0, dn, ix, bx, bu, bw, h, nu, nw
    cdef double w1, w2, w3, w4, v_old, v_new, jint, lw, r_, i_, lw_inc = 0, r_inc = 0, i_inc = 0
    cdef bint alive, ok
    with nogil:
        for i in range(n):
            x = s0v[0]; y = s0v[1]; u = s0v[2]; w = s0v[3]
            a = s0v[4] if mode == 1 else 0.0
            if mode == 0:
                alive = hypot(x, y) > chart_radius
            else:
                alive = x > chart_radius
            if not alive:
                fstep[i] = 0
            d0 = x * x + u * u + w * w
            v_old = _pot(pot, x, y, u, w)
            jint = 0.0; lw = 0.0; r_ = 0.0; i_ = 0.0
            if record:
                states[i, 0, 0] = x; states[i, 0, 1] = y; states[i, 0, 2] = u; states[i, 0, 3] = w
                if dim == 5:
                    states[i, 0, 4] = a
            for t in range(N):
                w1 = dW[i, t, 0]; w2 = dW[i, t, 1]; w3 = dW[i, t, 2]; w4 = dW[i, t, 3]
                d = x * x + u * u + w * w
                if mode == 0:
                    xn = x + s * w1; yn = y + s * w2; un = u + s * w3; wn = w + s * w4; an = a
                else:
                    ix = 1.0 / x
                    bx = 0.5 * ix
                    bu = -0.5 * u * ix * ix
                    bw = -0.5 * w * ix * ix
                    if mode == 3:
                        h = 0.5 / d
                        bx = bx - h * x
                        bu = bu - h * u
                        bw = bw - h * w
                    nu = w * ix * w2 + w3
                    nw = -u * ix * w2 + w4
                    xn = x + mu2k * bx * dt + s * w1
                    un = u + mu2k * bu * dt + s * nu
                    wn = w + mu2k * bw * dt + s * nw
                    yn = y
                    an = a + s * ix * w2 if mode == 1 else a
                    if mode >= 2:
                        lw_inc = s * (x * w1 + u * w3 + w * w4) / (2 * d) - mu2k * dt / (8 * d)
                        r_inc = -0.5 * k * k * mu2k * dt / d
                        i_inc = k * s * ((u * u + w * w) * ix / d * w2 + (w * w3 - u * w4) / d)
                if mode == 0:
                    ok = hypot(xn, yn) > chart_radius
                else:
                    ok = xn > chart_radius
                if alive and not ok:
                    fstep[i] = t
                    alive = False
                # failed paths stay frozen and stop accumulating (a stopped martingale)
                if alive:
                    x = xn; y = yn; u = un; w = wn; a = an
                    v_new = _pot(pot, x, y, u, w)
                    vint[i] += 0.5 * dt * (v_old + v_new)
                    v_old = v_new
                    if mode >= 2:
                        lw = lw + lw_inc
                        r_ = r_ + r_inc
                        i_ = i_ + i_inc
                        dn = x * x + u * u + w * w
                        jint = jint + 0.5 * dt * (3.0 / d + 3.0 / dn)
                if record:
                    states[i, t + 1, 0] = x; states[i, t + 1, 1] = y
                    states[i, t + 1, 2] = u; states[i, t + 1, 3] = w
                    if dim == 5:
                        states[i, t + 1, 4] = a
            out[i, 0] = x; out[i, 1] = y; out[i, 2] = u; out[i, 3] = w
            if dim == 5:
                out[i, 4] = a
            fail[i] = 0 if alive else 1
            logw[i] = lw
            er[i] = r_
            ei[i] = i_
            if mode >= 2:
                closed[i] = 0.25 * log((x * x + u * u + w * w) / d0) - mu2k / 8.0 * jint
    return (out_np, fail_np, fstep_np, logw_np, closed_np, vint_np, er_np, ei_np,
            states_np if record else None)
