"""Euler-Maruyama simulation of the original, adapted and reduced processes.

Conventions: every stepper is Ito; dX = mu2k * b dt + sqrt(mu2k) * B dW with the
drifts b from the curvature module.  The Wiener vector always has
n_W = n_P + n_V components; the group-direction noise of the adapted process
reuses the first n_P of them.

simulate() runs an ensemble with one independent generator per path
(SeedSequence(seed, spawn_key=(*key, i))), so results do not depend on chunking.
Path functionals (potential integral, Girsanov weights, ordered exponential) are
accumulated on the fly.  The Euclidean planar rotor runs on compiled kernels.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import curvature as cv
from ._kernels_select import BACKEND, kernels
from .errors import (ChartExit, ConfigError, FibrilError, NonPositiveDefiniteMetric,
                     PathFailureThreshold, SingularFaddeevPopov, SurfaceDrift)
from .geometry import COND_MAX, frame
from .models import SURFACE_TOL, AdaptedPoint, ModelSpec

KINDS = ("original", "adapted", "reduced", "reduced-noj2")
MAX_FAILURE_FRACTION = 1e-3
NEWTON_ITERS = 5


@dataclass(frozen=True)
class PhysicalScales:
    mu2kappa: float = 1.0
    mass: float = 1.0
    kappa_mode: str = "real"

    def __post_init__(self):
        if self.kappa_mode != "real":
            raise ConfigError("imaginary kappa is an analytic continuation and cannot be simulated")
        if not (self.mu2kappa > 0 and self.mass > 0):
            raise ConfigError("mu2kappa and mass must be positive")

    @property
    def noise(self) -> float:
        return math.sqrt(self.mu2kappa)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    dW: np.ndarray | None
    kind: str
    seed: int
    path_index: int = 0
    log_girsanov: float = 0.0
    log_girsanov_closed: float = 0.0
    potential_integral: float = 0.0
    ordered_exp: np.ndarray | None = None
    failure: str | None = None


@dataclass
class Ensemble:
    kind: str
    times: np.ndarray
    start: np.ndarray
    final: np.ndarray
    failed: np.ndarray
    failures: list
    seed: int
    seed_key: tuple
    backend: str
    log_girsanov: np.ndarray
    log_girsanov_closed: np.ndarray
    potential_integral: np.ndarray
    ordered_exp: np.ndarray | None = None
    states: np.ndarray | None = None
    dW: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return len(self.failed)

    @property
    def excluded_fraction(self) -> float:
        return float(np.mean(self.failed)) if len(self.failed) else 0.0

    def trajectory(self, i: int) -> Trajectory:
        if self.states is None:
            raise ValueError("ensemble was simulated without record=True")
        return Trajectory(
            times=self.times, states=self.states[i], dW=self.dW[i], kind=self.kind, seed=self.seed,
            path_index=i, log_girsanov=float(self.log_girsanov[i]),
            log_girsanov_closed=float(self.log_girsanov_closed[i]),
            potential_integral=float(self.potential_integral[i]),
            ordered_exp=None if self.ordered_exp is None else self.ordered_exp[i],
            failure=next((f[2] for f in self.failures if f[0] == i), None))


# ---------------------------------------------------------------- building blocks

def diffusion_factor(block) -> np.ndarray:
    """Lower Cholesky factor X with X X^T = block."""
    try:
        return np.linalg.cholesky(np.asarray(block, dtype=float))
    except np.linalg.LinAlgError as e:
        raise NonPositiveDefiniteMetric("diffusion block is not positive definite") from e


def state_dim(m: ModelSpec, kind: str) -> int:
    n = m.n_P + m.n_V
    return n + m.n_G if kind == "adapted" else n


def n_wiener(m: ModelSpec) -> int:
    return m.n_P + m.n_V


def laplace_drift(m: ModelSpec, Q) -> np.ndarray:
    """1/2 g^{-1/2} d_B (g^{1/2} G^{BA}) on P (without mu^2 kappa)."""
    G = m.metric_P(Q)
    dG, _ = m.metric_P_derivs(Q)
    Gi = np.linalg.inv(G)
    dGi = -Gi[..., None, :, :] @ dG @ Gi[..., None, :, :]
    dls = 0.5 * np.einsum("...ab,...kba->...k", Gi, dG)
    return 0.5 * (np.einsum("...bba->...a", dGi) + np.einsum("...ab,...b->...a", Gi, dls))


def _split(m, state, kind):
    nP, nV = m.n_P, m.n_V
    Q, f = state[..., :nP], state[..., nP:nP + nV]
    a = state[..., nP + nV:] if kind == "adapted" else np.zeros(state.shape[:-1] + (m.n_G,))
    return Q, f, a


def _check_chart(m, Q, section=False):
    ok = m.in_section(Q) if section else m.in_chart(Q)
    if not np.all(ok):
        raise ChartExit("state left the chart domain")


def step_original(m: ModelSpec, scales: PhysicalScales, state, dt, dW):
    state = np.asarray(state, dtype=float)
    nP = m.n_P
    Q, f = state[..., :nP], state[..., nP:]
    _check_chart(m, Q)
    X = diffusion_factor(np.linalg.inv(m.metric_P(Q)))
    XV = diffusion_factor(np.linalg.inv(m.metric_V))
    dW = np.asarray(dW, dtype=float)
    Qn = Q + scales.mu2kappa * laplace_drift(m, Q) * dt + scales.noise * np.einsum("...ab,...b->...a", X, dW[..., :nP])
    fn = f + scales.noise * np.einsum("ab,...b->...a", XV, dW[..., nP:])
    out = np.concatenate([Qn, fn], -1)
    _check_chart(m, Qn)
    return out


def _adapted_increment(m, scales, F, dt, dW, kind, include_j2=True):
    """State increment of the adapted / reduced process from the frame F."""
    nP = m.n_P
    dW = np.asarray(dW, dtype=float)
    s = scales.noise
    noise = np.einsum("...am,...m->...a", F.X1, dW)
    if kind == "adapted":
        bP, bV, bG = cv.drift_divergence_form(m, F)
        b = np.concatenate([bP, bV], -1)
        vb = m.frame_v(np.asarray(F.point.a, dtype=float))
        na = np.einsum("...ab,...bc,...cm,...m->...a", vb, F.Lambda, F.Xi, dW[..., :nP])
        return np.concatenate([scales.mu2kappa * b * dt + s * noise, scales.mu2kappa * bG * dt + s * na], -1)
    D = cv.drift_bundle(m, F)
    b = np.concatenate([D.bI_P, D.bI_V], -1)
    if include_j2:
        b = b + np.concatenate([D.j2_P, D.j2_V], -1)
    return scales.mu2kappa * b * dt + s * noise


def reproject(m: ModelSpec, state, kind):
    """Move a state back onto chi = 0 along its group orbit (nonlinear gauges only)."""
    if m.gauge_linear:
        return state
    nP, nV = m.n_P, m.n_V
    Q, f, a = _split(m, state, kind)
    Qs, ft, da = m.to_adapted(Q, f)
    r = np.max(np.abs(m.gauge(Qs)), axis=-1)
    if np.any(r > SURFACE_TOL):
        raise SurfaceDrift(f"re-projection left |chi| = {np.max(r):.3e}")
    parts = [Qs, ft]
    if kind == "adapted":
        parts.append(m.group_mult(da, a))
    return np.concatenate(parts, -1)


def step_adapted(m: ModelSpec, scales: PhysicalScales, state, dt, dW):
    state = np.asarray(state, dtype=float)
    Q, f, a = _split(m, state, "adapted")
    _check_chart(m, Q, True)
    F = frame(m, AdaptedPoint(Q, f, a))
    out = state + _adapted_increment(m, scales, F, dt, dW, "adapted")
    _check_chart(m, out[..., :m.n_P], True)
    return reproject(m, out, "adapted")


def step_reduced(m: ModelSpec, scales: PhysicalScales, state, dt, dW, include_j2: bool = True):
    state = np.asarray(state, dtype=float)
    Q, f, a = _split(m, state, "reduced")
    _check_chart(m, Q, True)
    F = frame(m, AdaptedPoint(Q, f, a))
    out = state + _adapted_increment(m, scales, F, dt, dW, "reduced", include_j2)
    _check_chart(m, out[..., :m.n_P], True)
    return reproject(m, out, "reduced")


# ---------------------------------------------------------------- matrix exponential

def expm_batch(A):
    """exp of a batch of small complex matrices (closed forms for sizes 1 and 2)."""
    A = np.asarray(A, dtype=complex)
    k = A.shape[-1]
    if k == 1:
        return np.exp(A)
    if k == 2:
        t = 0.5 * (A[..., 0, 0] + A[..., 1, 1])
        B = A - t[..., None, None] * np.eye(2)
        s = np.sqrt(-(B[..., 0, 0] * B[..., 1, 1] - B[..., 0, 1] * B[..., 1, 0]) + 0j)
        small = np.abs(s) < 1e-8
        ss = np.where(small, 1.0, s)
        c = np.where(small, 1 + s * s / 2, np.cosh(s))
        sh = np.where(small, 1 + s * s / 6, np.sinh(ss) / ss)
        return np.exp(t)[..., None, None] * (c[..., None, None] * np.eye(2) + sh[..., None, None] * B)
    from scipy.linalg import expm
    flat = A.reshape(-1, k, k)
    return np.stack([expm(x) for x in flat]).reshape(A.shape)


def holonomy_step(m, scales, F, dt, dW, gens, mode="exp"):
    """One factor of the ordered exponential for irrep generators gens[n_G, k, k]."""
    di, g1, C = cv.holonomy_terms(m, F)
    mu = scales.mu2kappa
    JJ = np.einsum("ank,bkm->abnm", gens, gens)
    nz = np.einsum("...bm,...m->...b", C, np.asarray(dW, dtype=float))
    if mode == "exp":
        E = (mu * dt * (0.5 * np.einsum("...ab,abnm->...nm", di, JJ) + np.einsum("...a,anm->...nm", g1, gens))
             + scales.noise * np.einsum("...b,bnm->...nm", nz, gens))
        return expm_batch(E)
    if mode == "linear":
        # Ito-consistent first-order factor: the drift carries the full 1/2 Lambda G^-1 Lambda^T JJ
        LGL = di + C @ C.swapaxes(-1, -2)
        k = gens.shape[-1]
        A = 0.5 * np.einsum("...ab,abnm->...nm", LGL, JJ) + np.einsum("...a,anm->...nm", g1, gens)
        return np.eye(k) + mu * dt * A + scales.noise * np.einsum("...b,bnm->...nm", nz, gens)
    raise ValueError(mode)


# ---------------------------------------------------------------- ensembles

def path_rng(seed: int, key: tuple, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key) + (int(i),))))


def draw_increments(seed, key, idx, nsteps, nW, dt) -> np.ndarray:
    out = np.empty((len(idx), nsteps, nW))
    sq = math.sqrt(dt)
    for j, i in enumerate(idx):
        out[j] = path_rng(seed, key, i).standard_normal((nsteps, nW)) * sq
    return out


def n_steps(t_final: float, dt: float) -> int:
    if t_final < 0 or dt <= 0:
        raise ConfigError("need t_final >= 0 and dt > 0")
    n = int(round(t_final / dt))
    if abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigError(f"dt = {dt} does not divide the horizon {t_final}")
    return n


def _start_state(m, kind, start):
    s = np.asarray(start, dtype=float).ravel()
    want = state_dim(m, kind)
    n = m.n_P + m.n_V
    if kind == "adapted" and s.size == n:
        s = np.concatenate([s, np.zeros(m.n_G)])
    if s.size != want:
        raise ConfigError(f"start state for {kind} needs {want} entries, got {s.size}")
    if kind != "original":
        r = np.max(np.abs(m.gauge(s[:m.n_P])))
        if r > SURFACE_TOL:
            raise ConfigError(f"start point is off the gauge surface (|chi| = {r:.3e})")
    return s


def _point_functionals(m, kind, S, want_girsanov):
    """Potential and (for reduced kinds) Girsanov integrands at states S[n, dim]."""
    Q, f, a = _split(m, S, kind)
    out = {"V": m.potential(Q, f)}
    if want_girsanov:
        out.update(cv.girsanov_integrands(m, frame(m, AdaptedPoint(Q, f, a))))
    return out


def _generic_chunk(m, scales, kind, s0, dW, dt, gens, ordered, record):
    """Advance a chunk of paths sharing a start; dW[n, N, nW]."""
    n, N, _ = dW.shape
    dim = s0.size
    S = np.broadcast_to(s0, (n, dim)).copy()
    alive = np.ones(n, bool)
    fail_step = np.full(n, -1)
    reduced = kind in ("reduced", "reduced-noj2")
    logw = np.zeros(n)
    jint = np.zeros(n)
    vint = np.zeros(n)
    U = None
    if gens is not None:
        k = gens.shape[-1]
        U = np.broadcast_to(np.eye(k, dtype=complex), (n, k, k)).copy()
    states = np.empty((n, N + 1, dim)) if record else None
    if record:
        states[:, 0] = S
    pf = _point_functionals(m, kind, S, reduced)
    sig0 = pf.get("sigma")
    for t in range(N):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        Sa, dWa = S[idx], dW[idx, t]
        try:
            new, extra = _advance(m, scales, kind, Sa, dt, dWa, gens, ordered)
        except FibrilError:
            new, extra, bad = _advance_each(m, scales, kind, Sa, dt, dWa, gens, ordered)
            fail_step[idx[bad]] = t
            alive[idx[bad]] = False
            keep = ~bad
            idx, new, pf = idx[keep], new[keep], {k_: v[keep] for k_, v in pf.items()}
            extra = {k_: v[keep] for k_, v in extra.items()}
        S[idx] = new
        pf_new = _point_functionals(m, kind, new, reduced)
        vint[idx] += 0.5 * dt * (pf["V"] + pf_new["V"])
        if reduced:
            u = pf["u"]
            logw[idx] += scales.noise * np.einsum("nm,nm->n", u, dW[idx, t]) - 0.5 * scales.mu2kappa * np.einsum("nm,nm->n", u, u) * dt
            jint[idx] += 0.5 * dt * (pf["jsum"] + pf_new["jsum"])
        if U is not None:
            U[idx] = extra["step"] @ U[idx]
        pf = pf_new
        if record:
            states[:, t + 1] = S
    closed = np.zeros(n)
    if reduced:
        sigT = _point_functionals(m, kind, S, True)["sigma"]
        closed = 0.25 * (sigT - sig0) - scales.mu2kappa / 8.0 * jint
    return S, ~alive, fail_step, logw, closed, vint, U, states


def _advance(m, scales, kind, S, dt, dW, gens, ordered):
    if kind == "original":
        return step_original(m, scales, S, dt, dW), {}
    Q, f, a = _split(m, S, kind)
    _check_chart(m, Q, True)
    fp = np.einsum("...ma,...ag->...mg", m.gauge_grad(Q), m.killing_P(Q))
    if np.any(np.linalg.cond(fp) > COND_MAX):
        raise SingularFaddeevPopov("Faddeev-Popov matrix is singular along the path")
    F = frame(m, AdaptedPoint(Q, f, a))
    new = S + _adapted_increment(m, scales, F, dt, dW, "adapted" if kind == "adapted" else "reduced",
                                 kind != "reduced-noj2")
    _check_chart(m, new[..., :m.n_P], True)
    new = reproject(m, new, kind)
    extra = {}
    if gens is not None:
        extra["step"] = holonomy_step(m, scales, F, dt, dW, gens, ordered)
    return new, extra


def _advance_each(m, scales, kind, S, dt, dW, gens, ordered):
    """Per-path fallback that isolates failing paths."""
    n = len(S)
    new = np.empty_like(S)
    bad = np.zeros(n, bool)
    steps = []
    for i in range(n):
        try:
            ni, ei = _advance(m, scales, kind, S[i:i + 1], dt, dW[i:i + 1], gens, ordered)
            new[i] = ni[0]
            steps.append(ei.get("step", [None])[0])
        except FibrilError:
            bad[i] = True
            new[i] = S[i]
            steps.append(None)
    extra = {}
    if gens is not None:
        k = gens.shape[-1]
        extra["step"] = np.stack([s if s is not None else np.eye(k, dtype=complex) for s in steps])
    return new, extra, bad


def kernel_supported(m: ModelSpec, gens=None, ordered="exp") -> bool:
    if m.name != "planar-rotor" or m.derivative_provider != "analytic":
        return False
    if gens is None:
        return True
    return gens.shape[-1] == 1 and ordered == "exp"


def simulate(m: ModelSpec, scales: PhysicalScales, kind: str, start, t_final: float, dt: float,
             n_paths: int, seed: int, *, irrep=None, ordered: str = "exp", record: bool = False,
             backend: str = "auto", seed_key: tuple = (), chunk: int = 4096,
             max_failure_fraction: float = MAX_FAILURE_FRACTION, workers: int = 1,
             dW=None) -> Ensemble:
    """Simulate n_paths independent paths of the given process from one start state.

    Path i always uses the increments of its own seed stream, so results do not
    depend on chunking or on the worker count.  dW [n_paths, N, n_W] overrides
    the generated increments (common random numbers)."""
    if kind not in KINDS:
        raise ConfigError(f"unknown process kind {kind!r}; choose from {KINDS}")
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    N = n_steps(t_final, dt)
    s0 = _start_state(m, kind, start)
    nW = n_wiener(m)
    gens = None if irrep is None else np.asarray(irrep.generators, dtype=complex)
    use_kernel = backend in ("auto", "kernel") and kernel_supported(m, gens, ordered)
    if backend == "kernel" and not use_kernel:
        raise ConfigError("compiled kernels support only the Euclidean planar rotor")
    times = np.linspace(0.0, N * dt, N + 1)
    dim = s0.size
    final = np.empty((n_paths, dim))
    failed = np.zeros(n_paths, bool)
    fstep = np.full(n_paths, -1)
    logw = np.zeros(n_paths)
    closed = np.zeros(n_paths)
    vint = np.zeros(n_paths)
    U = None if gens is None else np.empty((n_paths,) + gens.shape[1:], complex)
    states = np.empty((n_paths, N + 1, dim)) if record else None
    dWall = np.empty((n_paths, N, nW)) if record else None
    per = max(1, min(chunk, int(2e7 // max(1, N * nW))))
    if dW is not None:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (n_paths, N, nW):
            raise ConfigError(f"dW must have shape {(n_paths, N, nW)}, got {dW.shape}")

    def run(lo):
        idx = np.arange(lo, min(n_paths, lo + per))
        inc = draw_increments(seed, seed_key, idx, N, nW, dt) if dW is None else dW[idx]
        if use_kernel:
            k = 0.0 if gens is None else float(np.imag(gens[0, 0, 0]))
            r = kernels.rotor_chunk(KINDS.index(kind), s0, inc, dt, scales.mu2kappa, k,
                                    _pot_coeffs(m), m.chart_radius, record)
            S, fl, fs, lw, cl, vi, er, ei, st = r
            Uc = None if gens is None else np.exp(er + 1j * ei)[:, None, None]
        else:
            S, fl, fs, lw, cl, vi, Uc, st = _generic_chunk(m, scales, kind, s0, inc, dt, gens, ordered, record)
        # each chunk writes a disjoint index range
        final[idx], failed[idx], fstep[idx] = S, fl, fs
        logw[idx], closed[idx], vint[idx] = lw, cl, vi
        if U is not None:
            U[idx] = Uc
        if record:
            states[idx] = st
            dWall[idx] = inc

    starts = range(0, n_paths, per)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, starts))
    else:
        for lo in starts:
            run(lo)
    failures = [(int(i), int(fstep[i]), "path failed (chart exit or singular gauge)") for i in np.flatnonzero(failed)]
    ens = Ensemble(kind=kind, times=times, start=s0, final=final, failed=failed, failures=failures,
                   seed=int(seed), seed_key=tuple(seed_key), backend=BACKEND if use_kernel else "generic",
                   log_girsanov=logw, log_girsanov_closed=closed, potential_integral=vint,
                   ordered_exp=U, states=states, dW=dWall,
                   meta=dict(model=m.name, t_final=t_final, dt=dt, n_paths=n_paths,
                             mu2kappa=scales.mu2kappa, mass=scales.mass, ordered=ordered))
    frac = ens.excluded_fraction
    if frac > max_failure_fraction:
        raise PathFailureThreshold(
            f"{failed.sum()} of {n_paths} paths failed ({frac:.2%}); first: {failures[:5]}")
    return ens


def _pot_coeffs(m: ModelSpec) -> np.ndarray:
    pc = m.params.get("potential", {}) or {}
    return np.array([pc.get("c", 0.0), pc.get("Q2", 0.0), pc.get("f2", 0.0), pc.get("Qf", 0.0)])
