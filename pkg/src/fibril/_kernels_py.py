"""Pure-numpy twin of the compiled planar-rotor path kernels.

Closed forms on the gauge surface y = 0 with Q* = (x, 0), f~ = (u, w),
d = x^2 + u^2 + w^2 (all drifts without the mu^2 kappa factor):
  divergence drift   (1/(2x), 0, -u/(2x^2), -w/(2x^2)),  group drift 0
  j2                 (x, 0, u, w) / (2 d)
  noise              x: dW1;  u: (w/x) dW2 + dW3;  w: -(u/x) dW2 + dW4;  a: dW2/x
  Girsanov u.dW      (x dW1 + u dW3 + w dW4) / (2 d),  |u|^2 = 1/(4 d)
  Jacobian sum       3 / d
  holonomy noise     (u^2 + w^2)/(x d) dW2 + (w dW3 - u dW4)/d
Modes follow sde.KINDS: 0 original, 1 adapted, 2 reduced, 3 reduced-noj2.
"""
import numpy as np


def _pot(p, x, y, u, w):
    return p[0] + p[1] * (x * x + y * y) + p[2] * (u * u + w * w) + p[3] * (x * u + y * w)


def rotor_chunk(mode, s0, dW, dt, mu2k, k, pot, chart_radius, record):
    n, N, _ = dW.shape
    dim = 5 if mode == 1 else 4
    s = np.sqrt(mu2k)
    x = np.full(n, s0[0])
    y = np.full(n, s0[1])
    u = np.full(n, s0[2])
    w = np.full(n, s0[3])
    a = np.full(n, s0[4] if mode == 1 else 0.0)
    alive = np.ones(n, bool)
    fstep = np.full(n, -1)
    logw = np.zeros(n)
    jint = np.zeros(n)
    vint = np.zeros(n)
    er = np.zeros(n)
    ei = np.zeros(n)
    states = np.empty((n, N + 1, dim)) if record else None

    def pack():
        cols = [x, y, u, w, a][:dim]
        return np.stack(cols, -1)

    if record:
        states[:, 0] = pack()
    if mode == 0:
        alive &= np.hypot(x, y) > chart_radius
    else:
        alive &= x > chart_radius
    fstep[~alive] = 0
    d0 = x * x + u * u + w * w
    v_old = _pot(pot, x, y, u, w)
    for t in range(N):
        g = dW[:, t]
        w1, w2, w3, w4 = g[:, 0], g[:, 1], g[:, 2], g[:, 3]
        if mode == 0:
            xn, yn, un, wn, an = x + s * w1, y + s * w2, u + s * w3, w + s * w4, a
        else:
            d = x * x + u * u + w * w
            ix = 1.0 / x
            bx, bu, bw = 0.5 * ix, -0.5 * u * ix * ix, -0.5 * w * ix * ix
            if mode == 3:
                h = 0.5 / d
                bx, bu, bw = bx - h * x, bu - h * u, bw - h * w
            nu = w * ix * w2 + w3
            nw = -u * ix * w2 + w4
            xn = x + mu2k * bx * dt + s * w1
            un = u + mu2k * bu * dt + s * nu
            wn = w + mu2k * bw * dt + s * nw
            yn = y
            an = a + s * ix * w2 if mode == 1 else a
            if mode >= 2:
                lw_inc = s * (x * w1 + u * w3 + w * w4) / (2 * d) - mu2k * dt / (8 * d)
                er_inc = -0.5 * k * k * mu2k * dt / d
                ei_inc = k * s * ((u * u + w * w) * ix / d * w2 + (w * w3 - u * w4) / d)
        ok = (np.hypot(xn, yn) > chart_radius) if mode == 0 else (xn > chart_radius)
        newly = alive & ~ok
        fstep[newly] = t
        alive &= ok
        # failed paths stay frozen and stop accumulating (a stopped martingale)
        x_old, u_old, w_old = x, u, w
        x = np.where(alive, xn, x)
        y = np.where(alive, yn, y)
        u = np.where(alive, un, u)
        w = np.where(alive, wn, w)
        a = np.where(alive, an, a)
        v_new = _pot(pot, x, y, u, w)
        vint += np.where(alive, 0.5 * dt * (v_old + v_new), 0.0)
        if mode >= 2:
            logw += np.where(alive, lw_inc, 0.0)
            er += np.where(alive, er_inc, 0.0)
            ei += np.where(alive, ei_inc, 0.0)
            d_old = x_old * x_old + u_old * u_old + w_old * w_old
            d_new = x * x + u * u + w * w
            jint += np.where(alive, 0.5 * dt * (3.0 / d_old + 3.0 / d_new), 0.0)
        v_old = v_new
        if record:
            states[:, t + 1] = pack()
    closed = np.zeros(n)
    if mode >= 2:
        dT = x * x + u * u + w * w
        closed = 0.25 * np.log(dT / d0) - mu2k / 8.0 * jint
    return pack(), ~alive, fstep, logw, closed, vint, er, ei, states
