"""Measure-factorization artifacts: Girsanov weights, the ordered exponential,
Haar averages and Monte Carlo Green's-function relations.

Green's relations are estimated on the gauge surface with the "slice" method:
endpoints of both sides live in the flat surface coordinates z = (E^T Q*, f~)
and are smoothed with one product Gaussian kernel and one bandwidth.  All volume
factors (H^{1/2}, d^{1/4}, d^{1/2}) are applied per sample at its own endpoint,
so both sides smooth the same function of z and the smoothing bias cancels.
The group measure in the relations has total mass group_volume (unnormalized
Haar measure); haar_average itself is normalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import curvature as cv
from . import sde
from .errors import ConfigError, InsufficientSamples, MissingIncrements
from .geometry import frame
from .models import SURFACE_TOL, AdaptedPoint, ModelSpec, qexp, qlog, qmul

MIN_EFFECTIVE = 100
# Euler steps of the reduced process near the excluded origin jump across the
# section (x = 0 for the rotor); that rate falls only like 1/ln(1/dt), so the
# relations tolerate more exclusions than a plain simulation run
MAX_EXCLUDED = 1e-2


# ---------------------------------------------------------------- irreps

@dataclass(frozen=True)
class IrrepSpec:
    label: str
    dim: int
    generators: np.ndarray  # [n_G, dim, dim] complex
    evaluate: object  # a -> D(a) [..., dim, dim]

    def __call__(self, a):
        return self.evaluate(a)


def so2_charge(k: int) -> IrrepSpec:
    gens = np.array([[[1j * k]]])
    return IrrepSpec(f"so2:{k}", 1, gens, lambda a: np.exp(1j * k * np.asarray(a, float)[..., :1])[..., None])


_PAULI = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)


def su2_spin_half() -> IrrepSpec:
    """Spin-1/2 image of the quaternion units: e_a -> -i sigma_a, so D(a) = exp(a.J)."""
    gens = -1j * _PAULI

    def evaluate(a):
        a = np.asarray(a, dtype=float)
        q = qexp(a)
        # q = w + x i + y j + z k  ->  w I + sum q_a J_a
        return q[..., :1, None] * np.eye(2) + np.einsum("...a,anm->...nm", q[..., 1:], gens)

    return IrrepSpec("su2:1/2", 2, gens, evaluate)


def trivial_irrep(n_G: int) -> IrrepSpec:
    return IrrepSpec("trivial", 1, np.zeros((n_G, 1, 1), complex),
                     lambda a: np.ones(np.shape(a)[:-1] + (1, 1), complex))


def parse_irrep(spec: str, m: ModelSpec) -> IrrepSpec:
    """'trivial', 'so2:K' or 'su2:1/2'."""
    s = str(spec).strip().lower()
    if s == "trivial":
        return trivial_irrep(m.n_G)
    if s.startswith("so2:") and m.n_G == 1:
        return so2_charge(int(s[4:]))
    if s in ("su2:1/2", "su2:half") and m.n_G == 3:
        return su2_spin_half()
    raise ConfigError(f"irrep {spec!r} does not fit model {m.name}")


def check_irrep(irrep: IrrepSpec, m: ModelSpec, n_samples: int = 20, seed: int = 0) -> dict:
    """Residuals of the commutator relation and of the homomorphism property."""
    J = irrep.generators
    c = m.structure_constants
    comm = np.einsum("anm,bmk->abnk", J, J) - np.einsum("bnm,amk->abnk", J, J)
    rhs = np.einsum("gab,gnk->abnk", c, J) if m.n_G > 1 else np.zeros_like(comm)
    rng = np.random.default_rng(seed)
    a1 = rng.uniform(-0.5, 0.5, (n_samples, m.n_G))
    a2 = rng.uniform(-0.5, 0.5, (n_samples, m.n_G))
    hom = irrep(a1) @ irrep(a2) - irrep(m.group_mult(a1, a2))
    return {"commutators": float(np.max(np.abs(comm - rhs))), "homomorphism": float(np.max(np.abs(hom)))}


# ---------------------------------------------------------------- results

@dataclass
class EstimatorResult:
    value: complex | float | np.ndarray
    stderr: float | np.ndarray
    n_effective: int
    excluded_fraction: float
    seed: int
    config_digest: str = ""
    n_paths: int = 0
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        def enc(v):
            v = np.asarray(v)
            if np.iscomplexobj(v):
                return {"re": np.real(v).tolist(), "im": np.imag(v).tolist()}
            return v.tolist()
        return dict(value=enc(self.value), stderr=enc(self.stderr), n_effective=int(self.n_effective),
                    excluded_fraction=float(self.excluded_fraction), seed=int(self.seed),
                    config_digest=self.config_digest, n_paths=int(self.n_paths))


def z_score(a: EstimatorResult, b: EstimatorResult) -> float:
    """Largest |a - b| / sqrt(se_a^2 + se_b^2) over entries and over real/imaginary parts."""
    va, vb = np.asarray(a.value), np.asarray(b.value)
    sa, sb = np.asarray(a.stderr), np.asarray(b.stderr)
    if np.iscomplexobj(va) or np.iscomplexobj(vb):
        va, vb = va.astype(complex), vb.astype(complex)
        sa, sb = sa.astype(complex), sb.astype(complex)
        zs = [_z(va.real, vb.real, sa.real, sb.real), _z(va.imag, vb.imag, sa.imag, sb.imag)]
        return float(max(zs))
    return _z(va, vb, sa, sb)


def _z(a, b, sa, sb):
    den = np.sqrt(np.asarray(sa) ** 2 + np.asarray(sb) ** 2)
    diff = np.abs(np.asarray(a) - np.asarray(b))
    z = np.where(den > 0, diff / np.where(den > 0, den, 1.0), np.where(diff > 0, np.inf, 0.0))
    return float(np.max(z))


# ---------------------------------------------------------------- pathwise functionals

def _need_dW(traj):
    if traj.dW is None or len(traj.dW) != len(traj.times) - 1:
        raise MissingIncrements("trajectory carries no recorded Wiener increments")


def _traj_frames(m, traj):
    S = np.asarray(traj.states, dtype=float)
    Q, f = S[:, :m.n_P], S[:, m.n_P:m.n_P + m.n_V]
    return frame(m, AdaptedPoint(Q, f, np.zeros((len(S), m.n_G))))


def girsanov_log_weight_stochastic(traj, m: ModelSpec, scales: sde.PhysicalScales) -> float:
    """sum sqrt(mu2k) u.dW - 1/2 mu2k |u|^2 dt with u = 1/4 X1^T d sigma, left-point rule."""
    _need_dW(traj)
    if len(traj.times) < 2:
        return 0.0
    F = _traj_frames(m, traj)
    u = cv.girsanov_integrands(m, F)["u"][:-1]
    dt = np.diff(traj.times)
    return float(np.sum(scales.noise * np.einsum("km,km->k", u, traj.dW)
                        - 0.5 * scales.mu2kappa * np.einsum("km,km->k", u, u) * dt))


def girsanov_log_weight_closed(traj, m: ModelSpec, scales: sde.PhysicalScales, boundary: bool = True) -> float:
    """1/4 [sigma(T) - sigma(0)] - mu2k/8 int (Laplacian~ sigma + 1/4 <d sigma, d sigma>) dt (trapezoid)."""
    if len(traj.times) < 2:
        return 0.0
    F = _traj_frames(m, traj)
    g = cv.girsanov_integrands(m, F)
    integral = float(np.sum(0.5 * np.diff(traj.times) * (g["jsum"][1:] + g["jsum"][:-1])))
    out = -scales.mu2kappa / 8.0 * integral
    if boundary:
        out += 0.25 * float(g["sigma"][-1] - g["sigma"][0])
    return out


def feynman_kac_weight(traj, m: ModelSpec, scales: sde.PhysicalScales) -> float:
    """exp(1/(mu2k m) int V dt), trapezoid on the trajectory grid."""
    S = np.asarray(traj.states, dtype=float)
    V = m.potential(S[:, :m.n_P], S[:, m.n_P:m.n_P + m.n_V])
    integral = float(np.sum(0.5 * np.diff(traj.times) * (V[1:] + V[:-1]))) if len(S) > 1 else 0.0
    return math.exp(integral / (scales.mu2kappa * scales.mass))


def ordered_exponential(traj, m: ModelSpec, scales: sde.PhysicalScales, irrep: IrrepSpec,
                        mode: str = "exp") -> np.ndarray:
    """Time-ordered product of step factors, later times multiplying on the left."""
    _need_dW(traj)
    k = irrep.dim
    gens = np.asarray(irrep.generators, dtype=complex)
    U = np.eye(k, dtype=complex)
    if len(traj.times) < 2 or not np.any(gens):
        return U
    F = _traj_frames(m, traj)
    # frames at the left end of each step
    Fl = frame(m, AdaptedPoint(F.point.Qstar[:-1], F.point.ftilde[:-1], F.point.a[:-1]))
    dt = np.diff(traj.times)[:, None, None]
    steps = _holonomy_steps(m, scales, Fl, dt, traj.dW, gens, mode)
    for s in steps:
        U = s @ U
    return U


def _holonomy_steps(m, scales, F, dt, dW, gens, mode):
    di, g1, C = cv.holonomy_terms(m, F)
    mu = scales.mu2kappa
    JJ = np.einsum("ank,bkm->abnm", gens, gens)
    nz = np.einsum("...bm,...m->...b", C, dW)
    drift = 0.5 * np.einsum("...ab,abnm->...nm", di, JJ) + np.einsum("...a,anm->...nm", g1, gens)
    noise = scales.noise * np.einsum("...b,bnm->...nm", nz, gens)
    if mode == "exp":
        return sde.expm_batch(mu * dt * drift + noise)
    if mode == "linear":
        LGL = di + C @ C.swapaxes(-1, -2)
        drift = 0.5 * np.einsum("...ab,abnm->...nm", LGL, JJ) + np.einsum("...a,anm->...nm", g1, gens)
        return np.eye(gens.shape[-1]) + mu * dt * drift + noise
    raise ValueError(mode)


# ---------------------------------------------------------------- Haar averages

def haar_nodes(m: ModelSpec, n_so2: int = 256, su2_shape=(32, 16, 32)):
    """Group coordinates and weights (summing to 1) of the Haar quadrature."""
    if m.n_G == 1:
        th = 2 * np.pi * np.arange(n_so2) / n_so2
        return th[:, None], np.full(n_so2, 1.0 / n_so2)
    if m.n_G == 3:
        na, nb, ng = su2_shape
        if na * nb * ng > 16384:
            raise ConfigError("SU(2) quadrature is limited to 16384 nodes")
        al = 2 * np.pi * np.arange(na) / na
        ga = 4 * np.pi * np.arange(ng) / ng
        x, wb = np.polynomial.legendre.leggauss(nb)  # nodes in cos(beta)
        be = np.arccos(x)
        A, B, Gm = np.meshgrid(al, be, ga, indexing="ij")
        W = np.broadcast_to(wb[None, :, None], A.shape) / (2.0 * na * ng)
        ez = lambda t: qexp(np.stack([0 * t, 0 * t, t / 2], -1))
        ey = lambda t: qexp(np.stack([0 * t, t / 2, 0 * t], -1))
        q = qmul(qmul(ez(A), ey(B)), ez(Gm))
        return qlog(q).reshape(-1, 3), W.ravel()
    raise ConfigError(f"no Haar quadrature for n_G = {m.n_G}")


def haar_average(f, m: ModelSpec, **kw):
    """Normalized Haar average of f(a) (a: [K, n_G] group coordinates)."""
    a, w = haar_nodes(m, **kw)
    vals = np.asarray(f(a))
    return np.tensordot(w, vals, axes=(0, 0))


# ---------------------------------------------------------------- kernel density

def surface_coordinates(m: ModelSpec, Qs, ft, basis):
    """Flat coordinates z = (E^T Q*, f~) on the gauge surface."""
    return np.concatenate([np.einsum("...a,ak->...k", Qs, basis), ft], -1)


def silverman_bandwidth(z: np.ndarray) -> np.ndarray:
    n, dim = z.shape
    sd = np.std(z, axis=0, ddof=1)
    return sd * (4.0 / ((dim + 2.0) * n)) ** (1.0 / (dim + 4.0))


def gaussian_kernel(z, z0, bw):
    u = (z - z0) / bw
    dim = z.shape[-1]
    return np.exp(-0.5 * np.sum(u * u, -1)) / ((2 * np.pi) ** (dim / 2) * np.prod(bw))


def kde_estimate(contrib: np.ndarray, seed: int, excluded: float = 0.0, digest: str = "",
                 min_effective: int = MIN_EFFECTIVE, meta=None) -> EstimatorResult:
    """Mean of per-path contributions c_i (kernel value times weights)."""
    c = np.asarray(contrib)
    n = c.shape[0]
    mag = np.abs(c).reshape(n, -1).max(axis=1)
    s1, s2 = mag.sum(), (mag ** 2).sum()
    n_eff = int(s1 * s1 / s2) if s2 > 0 else 0
    if n_eff < min_effective:
        raise InsufficientSamples(f"kernel-density effective sample count {n_eff} < {min_effective}")
    val = c.mean(axis=0)
    if np.iscomplexobj(c):
        se = (np.std(c.real, axis=0, ddof=1) + 1j * np.std(c.imag, axis=0, ddof=1)) / math.sqrt(n)
    else:
        se = np.std(c, axis=0, ddof=1) / math.sqrt(n)
    return EstimatorResult(val, se, n_eff, excluded, seed, digest, n, meta or {})


# ---------------------------------------------------------------- Green's relations

@dataclass
class _Side:
    z: np.ndarray
    d: np.ndarray
    H: np.ndarray
    ens: sde.Ensemble
    theta: np.ndarray | None = None


def _surface_data(m, Qs, ft):
    F = frame(m, AdaptedPoint(Qs, ft, np.zeros(Qs.shape[:-1] + (m.n_G,))))
    return F.det_d, F.H


def _project(m, start):
    p = np.asarray(start, dtype=float)
    Qs, ft, a = m.to_adapted(p[None, :m.n_P], p[None, m.n_P:])
    return Qs[0], ft[0], a[0]


def _lhs_side(m, scales, kind, start_s, t, dt, n, seed, basis, irrep=None, backend="auto"):
    ens = sde.simulate(m, scales, kind, start_s, t, dt, n, seed, irrep=irrep, seed_key=(0,),
                       backend=backend, max_failure_fraction=1.0)
    ok = ~ens.failed
    Qs, ft = ens.final[ok, :m.n_P], ens.final[ok, m.n_P:m.n_P + m.n_V]
    d, H = _surface_data(m, Qs, ft)
    return _Side(surface_coordinates(m, Qs, ft, basis), d, H, ens)


def _rhs_side(m, scales, start, t, dt, n, seed, basis, backend="auto"):
    ens = sde.simulate(m, scales, "original", start, t, dt, n, seed, seed_key=(1,), backend=backend,
                       max_failure_fraction=1.0)
    ok = ~ens.failed
    Qs, ft, th = m.to_adapted(ens.final[ok, :m.n_P], ens.final[ok, m.n_P:])
    d, H = _surface_data(m, Qs, ft)
    return _Side(surface_coordinates(m, Qs, ft, basis), d, H, ens, th)


def _check_failures(limit, *sides):
    for s in sides:
        if s.ens.excluded_fraction > limit:
            raise sde.PathFailureThreshold(
                f"{int(s.ens.failed.sum())} of {s.ens.n_paths} paths failed on the {s.ens.kind} side")


def _pad(c, side):
    """Zero contributions for excluded paths keep the estimator an average over all paths."""
    out = np.zeros((side.ens.n_paths,) + c.shape[1:], dtype=c.dtype)
    out[~side.ens.failed] = c
    return out


def _target(m, end):
    Qb, fb, _ = _project(m, end)
    _, _, Vh = np.linalg.svd(m.gauge_grad(Qb))
    basis = Vh[m.n_G:].T
    return Qb, fb, basis, surface_coordinates(m, Qb, fb, basis)


def greens_relation_zero_momentum(m: ModelSpec, scales: sde.PhysicalScales, start, end, t: float,
                                  dt: float, n_paths: int, bandwidth=None, seed: int = 0,
                                  omit_d_factors: bool = False, digest: str = "", backend: str = "auto",
                                  max_failure_fraction: float = MAX_EXCLUDED):
    """(lhs, rhs, z) for d_b^{-1/4} d_a^{-1/4} G_Sigma(b; a) = int_G G_P(p_b th, v_b th; p_a, v_a) dmu(th)."""
    Qa, fa, _ = _project(m, start)
    Qb, fb, basis, zb = _target(m, end)
    da = float(_surface_data(m, Qa[None], fa[None])[0][0])
    L = _lhs_side(m, scales, "reduced-noj2", np.concatenate([Qa, fa]), t, dt, n_paths, seed, basis,
                  backend=backend)
    R = _rhs_side(m, scales, start, t, dt, n_paths, seed, basis, backend=backend)
    _check_failures(max_failure_fraction, L, R)
    bw = silverman_bandwidth(R.z) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, float), zb.shape)
    ok = ~L.ens.failed
    # path-integral weight of G_Sigma: potential and Jacobian terms, no boundary factor
    logw = (L.ens.log_girsanov_closed[ok] - 0.25 * np.log(L.d / da)
            + L.ens.potential_integral[ok] / (scales.mu2kappa * scales.mass))
    fac = 1.0 if omit_d_factors else (L.d * da) ** -0.25
    cL = np.exp(logw) * fac / np.sqrt(L.H) * gaussian_kernel(L.z, zb, bw)
    okR = ~R.ens.failed
    wR = np.exp(R.ens.potential_integral[okR] / (scales.mu2kappa * scales.mass))
    cR = wR / np.sqrt(R.d * R.H) * gaussian_kernel(R.z, zb, bw)
    meta = dict(bandwidth=bw.tolist(), d_a=da, target=zb.tolist(), omit_d_factors=omit_d_factors)
    lhs = kde_estimate(_pad(cL, L), seed, L.ens.excluded_fraction, digest, meta=meta)
    rhs = kde_estimate(_pad(cR, R), seed, R.ens.excluded_fraction, digest, meta=meta)
    return lhs, rhs, z_score(lhs, rhs)


def greens_relation_momentum(m: ModelSpec, scales: sde.PhysicalScales, irrep: IrrepSpec, start, end,
                             t: float, dt: float, n_paths: int, bandwidth=None, seed: int = 0,
                             digest: str = "", backend: str = "auto", ordered: str = "exp",
                             max_failure_fraction: float = MAX_EXCLUDED):
    """(lhs, rhs, max_z) for d_b^{-1/2} G^lambda_mn(b; a) = int_G G_P(p_b th, ...) D_mn(th) dmu(th).

    The start must lie on the gauge surface (group coordinate e)."""
    Qa, fa, aa = _project(m, start)
    if np.max(np.abs(aa)) > 1e-9:
        raise ConfigError("momentum relation needs a start point on the gauge surface")
    Qb, fb, basis, zb = _target(m, end)
    L = _lhs_side(m, scales, "reduced", np.concatenate([Qa, fa]), t, dt, n_paths, seed, basis,
                  irrep=irrep, backend=backend)
    R = _rhs_side(m, scales, start, t, dt, n_paths, seed, basis, backend=backend)
    _check_failures(max_failure_fraction, L, R)
    bw = silverman_bandwidth(R.z) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, float), zb.shape)
    ok = ~L.ens.failed
    U = L.ens.ordered_exp[ok] if L.ens.ordered_exp is not None else np.ones((ok.sum(), 1, 1), complex)
    wL = np.exp(L.ens.potential_integral[ok] / (scales.mu2kappa * scales.mass))
    kL = wL / np.sqrt(L.d * L.H) * gaussian_kernel(L.z, zb, bw)
    cL = U * kL[:, None, None]
    okR = ~R.ens.failed
    wR = np.exp(R.ens.potential_integral[okR] / (scales.mu2kappa * scales.mass))
    kR = wR / np.sqrt(R.d * R.H) * gaussian_kernel(R.z, zb, bw)
    cR = irrep(R.theta) * kR[:, None, None]
    meta = dict(bandwidth=bw.tolist(), target=zb.tolist(), irrep=irrep.label)
    lhs = kde_estimate(_pad(cL.astype(complex), L), seed, L.ens.excluded_fraction, digest, meta=meta)
    rhs = kde_estimate(_pad(cR.astype(complex), R), seed, R.ens.excluded_fraction, digest, meta=meta)
    return lhs, rhs, z_score(lhs, rhs)
