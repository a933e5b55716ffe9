"""Independent oracles: finite differences on raw model data only.

Nothing here imports geometry or curvature.  For a group-invariant function on
P x V the ambient Laplace-Beltrami operator splits as
    Lap_P s = Lap_H s + 1/2 <grad sigma, grad s>,
(the fiber volume is sqrt(det d)), so for s = sigma = ln det d
    J / mu2kappa = -1/8 (Lap_H sigma + 1/4 |grad sigma|^2)
                 = -1/8 (Lap_P sigma - 1/4 |grad sigma|^2).
"""
import numpy as np

H = 1e-2  # fourth-order central differences


def ambient_metric(m, x):
    """Block metric of P x V at x = (Q, f) (single point)."""
    nP = m.n_P
    G = np.zeros((x.size, x.size))
    G[:nP, :nP] = m.metric_P(x[:nP])
    G[nP:, nP:] = m.metric_V
    return G


def sigma_ambient(m, x):
    """ln det of the orbit metric K~^T G~ K~ built from the raw Killing fields."""
    nP = m.n_P
    Q, f = x[:nP], x[nP:]
    K = np.concatenate([m.killing_P(Q), m.killing_V(f)], 0)
    d = K.T @ ambient_metric(m, x) @ K
    return np.linalg.slogdet(d)[1]


def _d1(fun, x, i, h=H):
    e = np.zeros_like(x)
    e[i] = h
    return (-fun(x + 2 * e) + 8 * fun(x + e) - 8 * fun(x - e) + fun(x - 2 * e)) / (12 * h)


def gradient(fun, x, h=H):
    return np.array([_d1(fun, x, i, h) for i in range(x.size)])


def hessian(fun, x, h=H):
    n = x.size
    Hm = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            Hm[i, j] = Hm[j, i] = _d1(lambda y: _d1(fun, y, j, h), x, i, h)
    return Hm


def laplace_beltrami(m, fun, x, h=H):
    """(1/sqrt g) d_i (sqrt g g^ij d_j fun) = g^ij d_ij fun + (d_i g^ij + g^ij d_i ln sqrt g) d_j fun."""
    n = x.size
    gi = np.linalg.inv(ambient_metric(m, x))
    gr = gradient(fun, x, h)
    div = np.zeros(n)
    for i in range(n):
        dgi = _d1(lambda y: np.linalg.inv(ambient_metric(m, y)), x, i, h)
        dls = _d1(lambda y: 0.5 * np.linalg.slogdet(ambient_metric(m, y))[1], x, i, h)
        div += dgi[i] + gi[i] * dls
    return float(np.sum(gi * hessian(fun, x, h)) + div @ gr)


def jacobian_oracle(m, x, h=H):
    """J / mu2kappa at the ambient point x from finite differences of sigma."""
    s = lambda y: sigma_ambient(m, y)
    g = gradient(s, x, h)
    gi = np.linalg.inv(ambient_metric(m, x))
    return -0.125 * (laplace_beltrami(m, s, x, h) - 0.25 * g @ gi @ g)


def heat_kernel_smoothed(x, x0, t, bw):
    """Gaussian heat kernel of variance t per axis convolved with a product Gaussian of widths bw."""
    var = t + np.asarray(bw) ** 2
    return float(np.prod(np.exp(-0.5 * (x - x0) ** 2 / var) / np.sqrt(2 * np.pi * var)))


def exp_moment_bm(x0, t, lam, dim):
    """E exp(-lam |X_t|^2) for standard Brownian motion in R^dim started at x0."""
    a = 1.0 + 2.0 * lam * t
    return a ** (-dim / 2) * np.exp(-lam * float(np.dot(x0, x0)) / a)
