"""Model interface: manifold P x V, group action, gauge surface, potential.

Two analytic built-ins ship with the engine (planar rotor, quaternionic
adjoint); user models may swap in polynomial metrics/gauges on top of a
built-in action and then use finite-difference derivatives.

All evaluation functions are batched: a point array of shape (..., n)
maps to outputs with the same leading batch shape.  Derivative arrays put
the derivative index directly after the batch axes, e.g. dG[..., k, A, B]
is dG_AB/dQ^k.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ActionNotIsometric, ConfigError, NonPositiveDefiniteMetric

EPS3 = np.zeros((3, 3, 3))
EPS3[0, 1, 2] = EPS3[1, 2, 0] = EPS3[2, 0, 1] = 1.0
EPS3[0, 2, 1] = EPS3[2, 1, 0] = EPS3[1, 0, 2] = -1.0

FD_REL = 1e-5
FD_FLOOR = 1e-8
SURFACE_TOL = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n_P: int
    n_V: int
    n_G: int
    metric_P: Callable
    metric_P_derivs: Callable  # Q -> (dG, d2G)
    metric_V: np.ndarray
    action_P: Callable  # (Q, a) -> F(Q, a)
    action_P_jac: Callable  # (Q, a) -> dF^D/dQ^A as [..., D, A]
    killing_P: Callable  # Q -> K[..., A, alpha]
    killing_P_derivs: Callable  # Q -> (dK[..., k, A, alpha], d2K)
    rep_V: Callable  # a -> Dbar(a)
    generators_V: np.ndarray  # [alpha, b, c]
    structure_constants: np.ndarray  # c[gamma, alpha, beta]
    gauge: Callable  # Q -> chi
    gauge_grad: Callable  # Q -> chi'[..., mu, A]
    gauge_hess: Callable  # Q -> chi''[..., k, mu, A]
    gauge_linear: bool
    potential: Callable  # (Q, f) -> V
    frame_u: Callable  # a -> ubar (right-invariant frame)
    frame_u_left: Callable  # a -> u (left-invariant frame)
    adjoint: Callable  # a -> rho
    frame_u_derivs: Callable  # a -> dubar[..., k, alpha, beta]
    group_mult: Callable  # (a1, a2) -> coordinates of a1 a2
    to_adapted: Callable  # (Q, f) -> (Qstar, ftilde, a)
    chart_radius: float = 1e-3
    group_volume: float = 1.0
    derivative_provider: str = "analytic"
    fd_step: float = FD_REL
    params: dict = field(default_factory=dict)
    section: Callable | None = None  # Q* -> mask of the gauge-surface component in use

    def killing_V(self, f):
        """K^a_alpha(f) = (Jbar_alpha)^a_c f^c, shape (..., n_V, n_G)."""
        return np.einsum("gac,...c->...ag", self.generators_V, f)

    def from_adapted(self, Qstar, ftilde, a):
        f = np.einsum("...ab,...b->...a", self.rep_V(a), ftilde)
        return self.action_P(Qstar, a), f

    def in_chart(self, Q):
        return np.linalg.norm(Q, axis=-1) > self.chart_radius

    def in_section(self, Qstar):
        ok = self.in_chart(Qstar)
        return ok if self.section is None else ok & self.section(Qstar)

    def frame_v(self, a):
        return np.linalg.inv(self.frame_u(a))


@dataclass(frozen=True)
class AdaptedPoint:
    Qstar: np.ndarray
    ftilde: np.ndarray
    a: np.ndarray

    def check(self, m: ModelSpec, tol: float = SURFACE_TOL):
        r = np.max(np.abs(m.gauge(self.Qstar)))
        if r > tol:
            raise ValueError(f"point off the gauge surface: |chi| = {r:.3e}")
        return self


# ---------------------------------------------------------------- helpers

def rot2(a):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a), np.sin(a)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def skew3(v):
    """[v]x with [v]x w = v x w."""
    v = np.asarray(v, dtype=float)
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([np.stack([z, -w, y], -1),
                     np.stack([w, z, -x], -1),
                     np.stack([-y, x, z], -1)], -2)


def qmul(p, q):
    """Hamilton product of quaternions stored as (w, x, y, z)."""
    pw, pv = p[..., :1], p[..., 1:]
    qw, qv = q[..., :1], q[..., 1:]
    w = pw * qw - np.sum(pv * qv, -1, keepdims=True)
    v = pw * qv + qw * pv + np.cross(pv, qv)
    return np.concatenate([w, v], -1)


def qexp(a):
    a = np.asarray(a, dtype=float)
    th = np.linalg.norm(a, axis=-1, keepdims=True)
    return np.concatenate([np.cos(th), np.sinc(th / np.pi) * a], -1)


def qlog(q):
    """Exponential coordinates of a unit quaternion, |a| in [0, pi]."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    s = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    th = np.arctan2(s, q[..., :1])
    return q[..., 1:] / np.sinc(th / np.pi)


# right multiplication by the imaginary units: (q e_alpha)_A = R[alpha, A, B] q_B
_QUNITS = np.eye(4)[1:]
_RMUL = np.stack([np.stack([qmul(np.eye(4)[B], e) for B in range(4)], -1) for e in _QUNITS])


def _series(c, t2):
    out = np.zeros_like(t2)
    for ck in reversed(c):
        out = out * t2 + ck
    return out


_ALPHA = [1.0, -1 / 3, 2 / 45, -1 / 315, 2 / 14175, -2 / 467775]
_ALPHA_P = [-2 / 3, 8 / 45, -2 / 105, 16 / 14175, -4 / 93555, 16 / 14189175]
_BETA = [2 / 3, -2 / 15, 4 / 315, -2 / 2835, 4 / 155925, -4 / 6081075]
_BETA_P = [-4 / 15, 16 / 315, -4 / 945, 32 / 155925, -8 / 1216215, 32 / 212837625]
_SMALL = 0.25


def _su2_coeffs(th):
    """alpha, alpha'/theta, beta, beta'/theta for ubar = I + alpha A + beta A^2."""
    th = np.asarray(th, dtype=float)
    t2 = th * th
    small = th < _SMALL
    ts = np.where(small, 1.0, th)
    s, c = np.sin(ts), np.cos(ts)
    al = (s / ts) ** 2
    alp = 2 * s * c / ts ** 3 - 2 * s * s / ts ** 4
    be = (2 * ts - np.sin(2 * ts)) / (2 * ts ** 3)
    bep = ((2 - 2 * np.cos(2 * ts)) * ts - 3 * (2 * ts - np.sin(2 * ts))) / (2 * ts ** 5)
    return (np.where(small, _series(_ALPHA, t2), al),
            np.where(small, _series(_ALPHA_P, t2), alp),
            np.where(small, _series(_BETA, t2), be),
            np.where(small, _series(_BETA_P, t2), bep))


def _su2_ubar(a):
    a = np.asarray(a, dtype=float)
    A = skew3(a)
    al, _, be, _ = _su2_coeffs(np.linalg.norm(a, axis=-1))
    return np.eye(3) + al[..., None, None] * A + be[..., None, None] * (A @ A)


def _su2_ubar_derivs(a):
    a = np.asarray(a, dtype=float)
    A = skew3(a)
    A2 = A @ A
    al, alp, be, bep = _su2_coeffs(np.linalg.norm(a, axis=-1))
    E = skew3(np.eye(3))  # E[i] = [e_i]x
    out = []
    for i in range(3):
        ai = a[..., i][..., None, None]
        out.append(alp[..., None, None] * ai * A + al[..., None, None] * E[i]
                   + bep[..., None, None] * ai * A2 + be[..., None, None] * (E[i] @ A + A @ E[i]))
    return np.stack(out, -3)


def _su2_adjoint(a):
    a = np.asarray(a, dtype=float)
    A = skew3(a)
    th = np.linalg.norm(a, axis=-1)
    c1 = 2 * np.sinc(2 * th / np.pi)  # sin(2 th)/th
    c2 = 2 * np.sinc(th / np.pi) ** 2  # (1 - cos 2th)/th^2
    return np.eye(3) + c1[..., None, None] * A + c2[..., None, None] * (A @ A)


def _radial_metric(n, c0, c1, cm1):
    """G = w(s) I with w(s) = c0 + c1 s + cm1 / s, s = |Q|^2."""
    def w(s):
        return c0 + c1 * s + cm1 / s

    def metric(Q):
        s = np.sum(Q * Q, -1)
        return w(s)[..., None, None] * np.eye(n)

    def derivs(Q):
        s = np.sum(Q * Q, -1)
        w1 = c1 - cm1 / s ** 2
        w2 = 2 * cm1 / s ** 3
        I = np.eye(n)
        dG = (2 * w1[..., None] * Q)[..., None, None] * I
        hw = 4 * w2[..., None, None] * Q[..., :, None] * Q[..., None, :] + 2 * w1[..., None, None] * I
        d2G = hw[..., None, None] * I
        return dG, d2G

    return metric, derivs


_METRICS = {"euclidean": (1.0, 0.0, 0.0), "warped": (1.0, 0.5, 0.0), "cylinder": (0.0, 0.0, 1.0)}


def _make_potential(coeffs, qf_allowed):
    c = {"c": 0.0, "Q2": 0.0, "f2": 0.0, "Qf": 0.0}
    c.update(coeffs or {})
    if c["Qf"] != 0.0 and not qf_allowed:
        raise ConfigError("potential term Qf is not invariant for this model")

    def potential(Q, f):
        v = c["c"] + c["Q2"] * np.sum(Q * Q, -1) + c["f2"] * np.sum(f * f, -1)
        if c["Qf"] != 0.0:
            v = v + c["Qf"] * np.sum(Q * f, -1)
        return v

    return potential, c


# ---------------------------------------------------------------- built-ins

def _positive_axis(Q):
    # to_adapted lands on Q^0 > 0; crossing Q^0 = 0 leaves the section
    return np.asarray(Q)[..., 0] > 0


def builtin_planar_rotor(metric: str = "euclidean", rep: str = "rotation",
                         potential: dict | None = None) -> ModelSpec:
    """P = R^2 minus origin, SO(2) by rotations, V = R^2, gauge chi = Q^2.

    metric: "euclidean" (G = I), "warped" (G = (1 + |Q|^2/2) I) or
    "cylinder" (G = I/|Q|^2).  rep: "rotation" or "trivial".  The
    combination cylinder + trivial has constant orbit metric d = 1.
    """
    if metric not in _METRICS or rep not in ("rotation", "trivial"):
        raise ConfigError(f"unknown planar-rotor variant {metric}/{rep}")
    G, dG = _radial_metric(2, *_METRICS[metric])
    J = np.array([[[0.0, -1.0], [1.0, 0.0]]]) if rep == "rotation" else np.zeros((1, 2, 2))
    Jp = np.array([[0.0, -1.0], [1.0, 0.0]])
    pot, pc = _make_potential(potential, rep == "rotation")

    def killing(Q):
        return np.stack([-Q[..., 1], Q[..., 0]], -1)[..., None]

    def killing_derivs(Q):
        dK = np.broadcast_to(Jp.T[:, :, None], Q.shape[:-1] + (2, 2, 1))
        # dK[k, A, 0] = Jp[A, k]
        return np.array(dK), np.zeros(Q.shape[:-1] + (2, 2, 2, 1))

    def rep_V(a):
        a = np.asarray(a, dtype=float)[..., 0]
        return rot2(a) if rep == "rotation" else np.broadcast_to(np.eye(2), a.shape + (2, 2)).copy()

    def to_adapted(Q, f):
        Q = np.asarray(Q, dtype=float)
        r = np.linalg.norm(Q, axis=-1)
        a = np.arctan2(Q[..., 1], Q[..., 0])[..., None]
        Qs = np.stack([r, np.zeros_like(r)], -1)
        ft = np.einsum("...ab,...b->...a", rep_V(-a), f)
        return Qs, ft, a

    one = lambda a: np.ones(np.shape(a)[:-1] + (1, 1))
    name = "planar-rotor" if (metric, rep) == ("euclidean", "rotation") else f"planar-rotor[{metric},{rep}]"
    return ModelSpec(
        name=name, n_P=2, n_V=2, n_G=1,
        metric_P=G, metric_P_derivs=dG, metric_V=np.eye(2),
        action_P=lambda Q, a: np.einsum("...ab,...b->...a", rot2(np.asarray(a)[..., 0]), Q),
        action_P_jac=lambda Q, a: rot2(np.asarray(a)[..., 0]) + 0 * Q[..., None],
        killing_P=killing, killing_P_derivs=killing_derivs,
        rep_V=rep_V, generators_V=J, structure_constants=np.zeros((1, 1, 1)),
        gauge=lambda Q: Q[..., 1:2],
        gauge_grad=lambda Q: np.broadcast_to(np.array([[0.0, 1.0]]), Q.shape[:-1] + (1, 2)).copy(),
        gauge_hess=lambda Q: np.zeros(Q.shape[:-1] + (2, 1, 2)),
        gauge_linear=True, potential=pot,
        frame_u=one, frame_u_left=one, adjoint=one,
        frame_u_derivs=lambda a: np.zeros(np.shape(a)[:-1] + (1, 1, 1)),
        group_mult=lambda a1, a2: np.asarray(a1) + np.asarray(a2),
        to_adapted=to_adapted, group_volume=2 * np.pi, section=_positive_axis,
        params={"metric": metric, "rep": rep, "potential": pc},
    )


def builtin_quaternionic(n_rep: str = "adjoint", metric: str = "euclidean",
                         potential: dict | None = None) -> ModelSpec:
    """P = R^4 minus origin (quaternions), SU(2) by right multiplication.

    Generators of the group are the imaginary units (i, j, k), so
    [e_a, e_b] = 2 eps_abc e_c and c^g_ab = 2 eps_abg.  V = R^3 carries
    Dbar(a) = Ad(exp(-a)), whose generators are (Jbar_a)_bc = 2 eps_abc;
    G_V = I/4 makes det d = r^2 (r^2 + |f|^2)^2 on the surface.
    Gauge chi^a = Q^(1+a); the group chart is exponential coordinates.
    """
    if n_rep != "adjoint" or metric not in _METRICS:
        raise ConfigError(f"unknown quaternionic variant {n_rep}/{metric}")
    G, dG = _radial_metric(4, *_METRICS[metric])
    J = 2.0 * np.einsum("abc->abc", EPS3)  # J[a][b, c] = 2 eps_abc
    pot, pc = _make_potential(potential, False)
    chi_grad = np.eye(4)[1:]

    def killing(Q):
        return np.einsum("gAB,...B->...Ag", _RMUL, Q)

    def killing_derivs(Q):
        dK = np.einsum("gAk->kAg", _RMUL)
        return (np.broadcast_to(dK, Q.shape[:-1] + dK.shape).copy(),
                np.zeros(Q.shape[:-1] + (4,) + dK.shape))

    def rep_V(a):
        return _su2_adjoint(-np.asarray(a, dtype=float))

    def action(Q, a):
        return qmul(Q, qexp(a))

    def action_jac(Q, a):
        g = qexp(a)
        return np.stack([qmul(np.broadcast_to(np.eye(4)[B], np.shape(Q)), g) for B in range(4)], -1)

    def to_adapted(Q, f):
        Q = np.asarray(Q, dtype=float)
        r = np.linalg.norm(Q, axis=-1, keepdims=True)
        a = qlog(Q / r)
        Qs = np.concatenate([r, np.zeros_like(Q[..., 1:])], -1)
        ft = np.einsum("...ab,...b->...a", rep_V(-a), f)
        return Qs, ft, a

    name = "quaternionic-adjoint" if metric == "euclidean" else f"quaternionic-adjoint[{metric}]"
    return ModelSpec(
        name=name, n_P=4, n_V=3, n_G=3,
        metric_P=G, metric_P_derivs=dG, metric_V=0.25 * np.eye(3),
        action_P=action, action_P_jac=action_jac,
        killing_P=killing, killing_P_derivs=killing_derivs,
        rep_V=rep_V, generators_V=J,
        structure_constants=2.0 * np.einsum("abg->gab", EPS3),
        gauge=lambda Q: Q[..., 1:],
        gauge_grad=lambda Q: np.broadcast_to(chi_grad, Q.shape[:-1] + (3, 4)).copy(),
        gauge_hess=lambda Q: np.zeros(Q.shape[:-1] + (4, 3, 4)),
        gauge_linear=True, potential=pot,
        frame_u=_su2_ubar, frame_u_left=lambda a: _su2_ubar(-np.asarray(a, dtype=float)),
        adjoint=_su2_adjoint, frame_u_derivs=_su2_ubar_derivs,
        group_mult=lambda a1, a2: qlog(qmul(qexp(a1), qexp(a2))),
        to_adapted=to_adapted, group_volume=2 * np.pi ** 2, section=_positive_axis,
        params={"metric": metric, "rep": n_rep, "potential": pc},
    )


BUILTINS = {
    "planar-rotor": builtin_planar_rotor,
    "quaternionic-adjoint": builtin_quaternionic,
}


def get_model(name: str, **params) -> ModelSpec:
    if name not in BUILTINS:
        raise ConfigError(f"unknown model {name!r}; built-ins: {sorted(BUILTINS)}")
    try:
        return BUILTINS[name](**params)
    except TypeError as e:
        raise ConfigError(str(e)) from e


# ---------------------------------------------------------------- finite differences

def fd_jacobian(fun, x, rel=FD_REL, floor=FD_FLOOR):
    """Central-difference derivative; the derivative index follows the batch axes."""
    x = np.asarray(x, dtype=float)
    h = np.maximum(rel * np.abs(x), floor)
    cols = []
    for k in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[..., k] = h[..., k]
        fp, fm = np.asarray(fun(x + e)), np.asarray(fun(x - e))
        hk = h[..., k].reshape(h.shape[:-1] + (1,) * (fp.ndim - x.ndim + 1))
        cols.append((fp - fm) / (2 * hk))
    return np.stack(cols, x.ndim - 1)


def _fd_second(fun, x, rel):
    return fd_jacobian(lambda y: fd_jacobian(fun, y, rel, rel), x, 10 * rel, 10 * rel)


def with_finite_differences(m: ModelSpec, rel: float = FD_REL) -> ModelSpec:
    """Replace every derivative provider of m by central differences of its values."""
    zero_a = lambda Q: np.zeros(np.shape(Q)[:-1] + (m.n_G,))

    def killing(Q):
        # at the identity every coordinate is zero: use the relative step as absolute step
        return fd_jacobian(lambda a: m.action_P(Q, a), zero_a(Q), rel, rel).swapaxes(-1, -2)

    def metric_derivs(Q):
        return fd_jacobian(m.metric_P, Q, rel), _fd_second(m.metric_P, Q, rel)

    def killing_h(Q, h):
        return fd_jacobian(lambda a: m.action_P(Q, a), zero_a(Q), h, h).swapaxes(-1, -2)

    def killing_derivs(Q):
        # mixed differences of the action; nested steps balance truncation and roundoff
        h1, h2 = 100 * rel, 100 * rel
        dK = fd_jacobian(lambda q: killing_h(q, h1), Q, h1, h1)
        d2K = fd_jacobian(lambda q: fd_jacobian(lambda r: killing_h(r, h2), q, h2, h2), Q, h2, h2)
        return dK, d2K

    def gauge_grad(Q):
        return fd_jacobian(m.gauge, Q, rel).swapaxes(-1, -2)

    def gauge_hess(Q):
        return _fd_second(m.gauge, Q, rel).swapaxes(-1, -2)

    def action_jac(Q, a):
        return fd_jacobian(lambda q: m.action_P(q, a), Q, rel).swapaxes(-1, -2)

    gens = fd_jacobian(m.rep_V, np.zeros(m.n_G), rel, rel)
    return dataclasses.replace(
        m, killing_P=killing, metric_P_derivs=metric_derivs, killing_P_derivs=killing_derivs,
        gauge_grad=gauge_grad, gauge_hess=gauge_hess, action_P_jac=action_jac,
        generators_V=gens, derivative_provider="finite-difference", fd_step=rel)


# ---------------------------------------------------------------- user models

def _poly(terms, n):
    """terms: list of [coeff, [e_1..e_n]] -> vectorized polynomial in Q."""
    terms = [(float(c), np.asarray(e, dtype=int)) for c, e in terms]
    for _, e in terms:
        if e.shape != (n,) or np.any(e < 0):
            raise ConfigError(f"bad polynomial exponent vector {e.tolist()}")

    def p(Q):
        out = np.zeros(np.shape(Q)[:-1])
        for c, e in terms:
            out = out + c * np.prod(Q ** e, axis=-1)
        return out

    return p, max((int(e.sum()) for _, e in terms), default=0)


def user_model(desc: dict) -> ModelSpec:
    """Build a model from a declarative description (see README, "User models").

    {"base": "planar-rotor" | "quaternionic-adjoint",
     "metric_P": {"entries": {"i,j": [[coeff, [exponents]], ...]}},
     "gauge": [[[coeff, [exponents]], ...], ...],
     "potential": {...}}
    Unlisted metric entries default to the base metric; entries are symmetrized.
    Derivatives are computed by central differences.
    """
    base = get_model(desc.get("base", "planar-rotor"), potential=desc.get("potential"))
    n = base.n_P
    metric, gauge, linear = base.metric_P, base.gauge, base.gauge_linear
    if "metric_P" in desc:
        entries = {}
        for key, terms in desc["metric_P"].get("entries", {}).items():
            i, j = (int(s) for s in str(key).split(","))
            entries[(i, j)] = _poly(terms, n)[0]
        base_metric = base.metric_P

        def metric(Q):
            G = np.array(base_metric(Q))
            for (i, j), p in entries.items():
                G[..., i, j] = G[..., j, i] = p(Q)
            return G
    if "gauge" in desc:
        comps = [_poly(t, n) for t in desc["gauge"]]
        if len(comps) != base.n_G:
            raise ConfigError(f"gauge needs {base.n_G} components")
        linear = all(deg <= 1 for _, deg in comps)

        def gauge(Q):
            return np.stack([p(Q) for p, _ in comps], -1)
    m = dataclasses.replace(base, name=desc.get("name", "user:" + base.name),
                            metric_P=metric, gauge=gauge, gauge_linear=linear,
                            params={**base.params, "user": desc})
    m = with_finite_differences(m)
    if "gauge" in desc:
        m = dataclasses.replace(m, to_adapted=_newton_to_adapted(m, base.to_adapted))
    return m


def load_user_model(path: str) -> ModelSpec:
    with open(path) as fh:
        text = fh.read()
    try:
        desc = json.loads(text)
    except json.JSONDecodeError:
        import yaml
        desc = yaml.safe_load(text)
    return user_model(desc)


def _newton_to_adapted(m: ModelSpec, guess, iters=20, tol=1e-12):
    """Solve chi(F(Q, -a)) = 0 for a, starting from the base model's closed form."""
    def to_adapted(Q, f):
        Q = np.asarray(Q, dtype=float)
        _, _, a = guess(Q, f)
        for _ in range(iters):
            r = m.gauge(m.action_P(Q, -a))
            if np.max(np.abs(r)) < tol:
                break
            Jm = fd_jacobian(lambda b: m.gauge(m.action_P(Q, -b)), a)  # [..., k, mu]
            a = a - np.linalg.solve(Jm.swapaxes(-1, -2), r[..., None])[..., 0]
        Qs = m.action_P(Q, -a)
        ft = np.einsum("...ab,...b->...a", m.rep_V(-a), f)
        return Qs, ft, a
    return to_adapted


# ---------------------------------------------------------------- sampling

def sample_points(m: ModelSpec, n: int, rng):
    """Q in the annulus 0.5 <= |Q| <= 2, f in the ball of radius 2, a in the unit ball."""
    def ball(dim, radius, shell=0.0):
        d = rng.standard_normal((n, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        if shell > 0:
            r = rng.uniform(shell, radius, n)
        else:
            r = radius * rng.uniform(0, 1, n) ** (1.0 / dim)
        return d * r[:, None]
    return ball(m.n_P, 2.0, 0.5), ball(m.n_V, 2.0), ball(m.n_G, 1.0)


def sample_adapted_points(m: ModelSpec, n: int, rng):
    Q, f, a = sample_points(m, n, rng)
    Qs, ft, _ = m.to_adapted(Q, f)
    return [AdaptedPoint(Qs[i], ft[i], a[i]) for i in range(n)]


# ---------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    model: str
    n_samples: int
    residuals: dict
    tolerances: dict

    @property
    def passed(self) -> dict:
        return {k: bool(v <= self.tolerances[k]) for k, v in self.residuals.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def _chol_ok(M):
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False


def validate_model(m: ModelSpec, n_samples: int = 100, seed=0, tol: float = 1e-10) -> ValidationReport:
    """Check every model invariant at random points; report the max violation of each."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    Q, f, a = sample_points(m, n_samples, rng)
    _, _, a2 = sample_points(m, n_samples, rng)
    G = m.metric_P(Q)
    if not _chol_ok(G):
        raise NonPositiveDefiniteMetric(f"{m.name}: metric_P not positive definite")
    if not _chol_ok(m.metric_V):
        raise NonPositiveDefiniteMetric(f"{m.name}: metric_V not positive definite")
    res = {}
    # G_AB(Q) = G_DC(F(Q,g)) F^D_A F^C_B
    Fq = m.action_P_jac(Q, a)
    pull = np.einsum("...DA,...DC,...CB->...AB", Fq, m.metric_P(m.action_P(Q, a)), Fq)
    res["isometry_P"] = float(np.max(np.abs(pull - G)))
    Db = m.rep_V(a)
    res["isometry_V"] = float(np.max(np.abs(np.einsum("...ap,ab,...bq->...pq", Db, m.metric_V, Db) - m.metric_V)))
    V0 = m.potential(Q, f)
    V1 = m.potential(m.action_P(Q, a), np.einsum("...ab,...b->...a", Db, f))
    res["potential_invariance"] = float(np.max(np.abs(V1 - V0)))
    Jb, c = m.generators_V, m.structure_constants
    comm = np.einsum("abc,gcd->agbd", Jb, Jb) - np.einsum("gbc,acd->agbd", Jb, Jb)
    res["generator_commutators"] = float(np.max(np.abs(comm + np.einsum("kag,kbd->agbd", c, Jb))))
    res["structure_antisymmetry"] = float(np.max(np.abs(c + c.swapaxes(1, 2))))
    lhs = m.action_P(m.action_P(Q, a), a2)
    rhs = m.action_P(Q, m.group_mult(a, a2))
    res["action_compatibility_P"] = float(np.max(np.abs(lhs - rhs)))
    Dl = np.einsum("...ab,...bc->...ac", m.rep_V(a2), Db)
    res["action_compatibility_V"] = float(np.max(np.abs(Dl - m.rep_V(m.group_mult(a, a2)))))
    rho = m.adjoint(a)
    res["adjoint_frame"] = float(np.max(np.abs(rho - m.frame_u(a) @ np.linalg.inv(m.frame_u_left(a)))))
    # intertwining D Jbar Dbar = rho^b_a Jbar_b
    Dinv = m.rep_V(-a)
    lhs = np.einsum("...cb,abp,...pe->...ace", Dinv, Jb, Db)
    res["adjoint_intertwining"] = float(np.max(np.abs(lhs - np.einsum("...ba,bce->...ace", rho, Jb))))
    tols = {k: tol for k in res}
    report = ValidationReport(m.name, n_samples, res, tols)
    for key in ("isometry_P", "isometry_V"):
        if res[key] > tol:
            raise ActionNotIsometric(f"{m.name}: {key} residual {res[key]:.3e} > {tol:.1e}")
    return report
