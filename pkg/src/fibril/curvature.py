"""Drift ingredients on the gauge surface and the reduction-Jacobian integrand.

Every drift is returned without its mu^2 kappa prefactor; the SDE module
applies PhysicalScales.  Ambient n-vectors are ordered (Q*, f~); Q*-derivatives
are P_bot-projected.  The lifted horizontal Christoffel symbols use the
block-diagonal ambient inverse (canonical representative); every drift use
contracts them with N, where the choice drops out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jet import Jet, vstack
from .geometry import GeometricFrame, _frame_at, sigma_full
from .models import AdaptedPoint, ModelSpec


@dataclass(frozen=True)
class DriftBundle:
    b_div_P: np.ndarray
    b_div_V: np.ndarray
    b_div_G: np.ndarray
    j2_P: np.ndarray
    j2_V: np.ndarray
    j1_P: np.ndarray
    j1_V: np.ndarray
    bI_P: np.ndarray
    bI_V: np.ndarray
    christoffel_term_P: np.ndarray
    christoffel_term_V: np.ndarray
    J_integrand: np.ndarray
    J_scale: str = "mu2kappa"


def _T(x):
    return x.swapaxes(-1, -2)


def _rho(F: GeometricFrame) -> Jet:
    """sqrt(d H) as a scalar jet."""
    J = F.jets
    return ((J["lnd"] + J["lnH"]) * 0.5).exp()


def _div(F: GeometricFrame, M: Jet) -> np.ndarray:
    """(1/rho) sum_A d*_A (rho M)[A, :] over all ambient rows."""
    rho = _rho(F)
    dM = (M * rho).projected(F.jets["Pfull"])
    return np.einsum("...kkc->...c", dM) / rho.v[..., 0]


# ---------------------------------------------------------------- divergence-form drifts

def drift_divergence_form(m: ModelSpec, p: AdaptedPoint):
    """(b_div_P, b_div_V, b_div_G): the three divergence-form drifts without the
    1/2 mu^2 kappa prefactor folded in (the 1/2 is kept, so dX = mu2k*b dt + ...)."""
    F = _frame_at(m, p)
    J = F.jets
    nP = m.n_P
    b = 0.5 * _div(F, J["h"])
    bG = drift_group(m, F)
    return b[..., :nP], b[..., nP:], bG


def drift_group(m: ModelSpec, p) -> np.ndarray:
    """Group-direction drift b^alpha (without mu^2 kappa)."""
    F = _frame_at(m, p)
    J = F.jets
    nP = m.n_P
    Lam, Ginv, N, KV = J["Lam"], J["Ginv"], J["N"], J["KV"]
    LGL = Lam @ Ginv @ Lam.T
    # rows over the ambient index: P-rows -h_PP A_gamma^T = N G^-1 Lambda^T, V-rows -(LGL K_V^T)^T
    top = N @ Ginv @ Lam.T
    bot = -(KV @ LGL)
    M = vstack([top, bot])
    gterm = _div(F, M)  # [..., beta]
    a = np.asarray(F.point.a, dtype=float)
    ub = m.frame_u(a)
    vb = np.linalg.inv(ub)
    du = m.frame_u_derivs(a)  # [k, alpha, beta]
    dvb = -vb[..., None, :, :] @ du @ vb[..., None, :, :]
    out = 0.5 * np.einsum("...ab,...b->...a", vb, gterm)
    # 1/2 LGL[a', b'] vbar[b, b'] d_b vbar[alpha, a']
    out = out + 0.5 * np.einsum("...pq,...bq,...bap->...a", LGL.v, vb, dvb)
    return out


# ---------------------------------------------------------------- orbit mean curvature

def nabla_KK(m: ModelSpec, p) -> tuple:
    """Covariant derivatives (nabla_{K_alpha} K_beta) on P (Levi-Civita of metric_P)
    and on V (flat): arrays [..., A, alpha, beta] and [..., b, alpha, beta]."""
    F = _frame_at(m, p)
    Q = np.asarray(F.point.Qstar, dtype=float)
    f = np.asarray(F.point.ftilde, dtype=float)
    K = F.K_P
    dK, _ = m.killing_P_derivs(Q)  # [k, C, beta]
    dG, _ = m.metric_P_derivs(Q)  # [k, A, B]
    Gi = F.G_inv
    low = 0.5 * (np.einsum("...aeb->...eab", dG) + np.einsum("...bea->...eab", dG)
                 - dG)  # [E, A, B]: 1/2(d_A G_EB + d_B G_EA - d_E G_AB)
    Gam = np.einsum("...ce,...eab->...cab", Gi, low)
    nP = (np.einsum("...ka,...kcb->...cab", K, dK)
          + np.einsum("...cAB,...Aa,...Bb->...cab", Gam, K, K))
    Jb = m.generators_V
    nV = np.einsum("bpq,aqr,...r->...pab", Jb, Jb, f)  # (Jbar_beta Jbar_alpha f)
    return nP, nV


def _dKK(m, F):
    nP, nV = nabla_KK(m, F)
    di = F.d_inv
    return (np.einsum("...ab,...cab->...c", di, nP), np.einsum("...ab,...cab->...c", di, nV))


def orbit_mean_curvature(m: ModelSpec, p) -> np.ndarray:
    """Mean-curvature vector of the orbit in the adapted basis (Q*, f~, a)."""
    F = _frame_at(m, p)
    nP = m.n_P
    kP, kV = _dKK(m, F)
    Pi = F.Pi_tilde
    a = np.asarray(F.point.a, dtype=float)
    vb = m.frame_v(a)
    muQ = 0.5 * np.einsum("...rb,...b->...r", F.N_PP, kP)
    muf = 0.5 * (np.einsum("...qb,...b->...q", F.N_VP, kP) + kV)
    w = (np.einsum("...cb,...b->...c", Pi[..., :nP, :nP], kP)
         + np.einsum("...cb,...b->...c", Pi[..., :nP, nP:], kV))
    mua = 0.5 * np.einsum("...nm,...mc,...c->...n", vb, F.Lambda, w)
    return np.concatenate([muQ, muf, mua], -1)


# ---------------------------------------------------------------- j2

def j2(m: ModelSpec, p):
    """Projection of the orbit mean curvature onto the surface (curvature form)."""
    F = _frame_at(m, p)
    kP, kV = _dKK(m, F)
    hG = F.h_PP @ F.G
    jP = -0.5 * np.einsum("...lb,...b->...l", hG, kP)
    jV = -0.5 * (np.einsum("...qb,...b->...q", F.N_VP, kP) + kV)
    return jP, jV


def j2_sigma(m: ModelSpec, p):
    """Same drift in the sigma form 1/4 h grad(sigma)."""
    F = _frame_at(m, p)
    _, g, _ = sigma_full(m, F)
    j = 0.25 * np.einsum("...ab,...b->...a", F.h, g)
    return j[..., : m.n_P], j[..., m.n_P:]


# ---------------------------------------------------------------- horizontal Christoffel terms

def horizontal_christoffel(m: ModelSpec, p, lowered: bool = False) -> np.ndarray:
    """Lifted horizontal Christoffel symbols Gamma[..., A, B, M] (or lowered [B, M, D])."""
    F = _frame_at(m, p)
    J = F.jets
    dGH = J["GH"].projected(J["Pfull"])  # [k, B, D] = d*_k GH_BD
    # the lowered slot D is an ambient index: its derivative stays unprojected
    dD = J["GH"].d
    low = 0.5 * (np.einsum("...mbd->...bmd", dGH) + dGH - np.einsum("...dbm->...bmd", dD))
    if lowered:
        return low
    return np.einsum("...ad,...bmd->...abm", J["Gbinv"].v, low)


def _hGamma(m, F):
    Gam = horizontal_christoffel(m, F)
    return np.einsum("...bm,...abm->...a", F.h, Gam)


def horizontal_christoffel_contractions(m: ModelSpec, p):
    """(christoffel_term_P, christoffel_term_V) = -1/2 h^{BM} Gamma^.{BM}."""
    F = _frame_at(m, p)
    c = -0.5 * _hGamma(m, F)
    return c[..., : m.n_P], c[..., m.n_P:]


# ---------------------------------------------------------------- j1

def j1(m: ModelSpec, p):
    """Orbit-space mean-curvature drift from the N-derivative representation."""
    F = _frame_at(m, p)
    J = F.jets
    nP = m.n_P
    Pf = J["Pfull"]
    dN = J["N"].projected(Pf)[..., :nP, :, :]  # [M, A, B]
    dNVP = J["NVP"].projected(Pf)[..., :nP, :, :]  # [M, a, C]
    hPP = F.h_PP
    hG = _hGamma(m, F)
    hGP, hGV = hG[..., :nP], hG[..., nP:]
    NhG = np.einsum("...ac,...c->...a", F.N_PP, hGP)
    jP = 0.5 * np.einsum("...bm,...mab->...a", hPP, dN) + 0.5 * (hGP - NhG)
    jV = (0.5 * np.einsum("...cm,...mac->...a", hPP, dNVP)
          - 0.5 * np.einsum("...ac,...c->...a", F.N_VP, hGP))
    return jP, jV


def j1_projector(m: ModelSpec, p):
    """The projector form of j1 valid when the surface has no second fundamental
    form term in ambient coordinates (linear gauges): 1/2 (I - N) h Gamma^P and
    -1/2 N_VP h Gamma^P."""
    F = _frame_at(m, p)
    nP = m.n_P
    hGP = _hGamma(m, F)[..., :nP]
    IN = np.eye(nP) - F.N_PP
    return (0.5 * np.einsum("...ac,...c->...a", IN, hGP),
            -0.5 * np.einsum("...ac,...c->...a", F.N_VP, hGP))


# ---------------------------------------------------------------- reduction Jacobian

def sigma_terms(m: ModelSpec, p) -> dict:
    """Laplacian pieces of sigma = ln det d on the surface."""
    F = _frame_at(m, p)
    _, g, H2 = sigma_full(m, F)
    h = F.h
    lapH = np.einsum("...ab,...ab->...", h, H2) - np.einsum("...a,...a->...", _hGamma(m, F), g)
    grad2 = np.einsum("...a,...ab,...b->...", g, h, g)
    jP, jV = j1(m, F)
    jsig = np.einsum("...a,...a->...", np.concatenate([jP, jV], -1), g)
    return dict(lap_H=lapH, grad_sq=grad2, j1_sigma=jsig, lap_tilde=lapH + 2.0 * jsig, grad=g)


def jacobian_integrand(m: ModelSpec, p, form: str = "horizontal") -> np.ndarray:
    """J / (mu^2 kappa) = -1/8 (Laplacian sigma + 1/4 <d sigma, d sigma>).

    form="horizontal" uses the horizontal Laplacian; form="tilde" adds the
    2 j1.d sigma terms (which vanish)."""
    s = sigma_terms(m, p)
    lap = s["lap_H"] if form == "horizontal" else s["lap_tilde"]
    return -0.125 * (lap + 0.25 * s["grad_sq"])


def drift_bundle(m: ModelSpec, p) -> DriftBundle:
    F = _frame_at(m, p)
    bP, bV, bG = drift_divergence_form(m, F)
    j2P, j2V = j2(m, F)
    j1P, j1V = j1(m, F)
    cP, cV = horizontal_christoffel_contractions(m, F)
    return DriftBundle(b_div_P=bP, b_div_V=bV, b_div_G=bG, j2_P=j2P, j2_V=j2V, j1_P=j1P,
                       j1_V=j1V, bI_P=cP + j1P, bI_V=cV + j1V, christoffel_term_P=cP,
                       christoffel_term_V=cV, J_integrand=jacobian_integrand(m, F))


def closure_residual(m: ModelSpec, p) -> float:
    """max |b_div - (christoffel + j1 + j2)| over the Q* and f~ directions."""
    D = drift_bundle(m, p)
    rP = D.b_div_P - D.bI_P - D.j2_P
    rV = D.b_div_V - D.bI_V - D.j2_V
    return float(max(np.max(np.abs(rP)), np.max(np.abs(rV))))


# ---------------------------------------------------------------- path-functional integrands

def girsanov_integrands(m: ModelSpec, p) -> dict:
    """Per-point pieces of the Girsanov weight removing j2 (all without mu^2 kappa).

    u: (1/4) X1^T d sigma, so the drift difference is mu2k j2 = sqrt(mu2k) X1 (sqrt(mu2k) u);
    jsum: Laplacian-tilde sigma + 1/4 <d sigma, d sigma>; sigma: ln det d."""
    F = _frame_at(m, p)
    s = sigma_terms(m, F)
    u = 0.25 * np.einsum("...am,...a->...m", F.X1, s["grad"])
    return dict(u=u, jsum=s["lap_tilde"] + 0.25 * s["grad_sq"], jsum_H=s["lap_H"] + 0.25 * s["grad_sq"],
                sigma=np.log(F.det_d))


def holonomy_terms(m: ModelSpec, p):
    """Coefficients of the ordered-exponential exponent at one point.

    Returns (d_inv, Gamma1, C): the step exponent for an irrep with generators J is
    mu2k (1/2 d^{ab} J_a J_b + Gamma1^n J_n) dt + sqrt(mu2k) (C dW)^b J_b, where
    C = Lambda Pi~ blockdiag(X, X_V) maps the n_W Wiener increments."""
    F = _frame_at(m, p)
    J = F.jets
    nP, nV, nG = m.n_P, m.n_V, m.n_G
    Lam, Ginv, N, KV = J["Lam"], J["Ginv"], J["N"], J["KV"]
    LGL = (Lam @ Ginv @ Lam.T).v
    batch = F.d.shape[:-2]
    zP = Jet.const(np.zeros(batch + (nP, nG)), nP + nV)
    zV = Jet.const(np.zeros(batch + (nV, nG)), nP + nV)
    g1 = _div(F, vstack([N @ Ginv @ Lam.T, zV]))
    g2 = _div(F, vstack([zP, KV]))
    Gamma1 = 0.5 * g1 - 0.5 * np.einsum("...nm,...m->...n", LGL, g2)
    Pi = F.Pi_tilde
    XX = np.zeros(batch + (nP + nV, nP + nV))
    XX[..., :nP, :nP] = F.Xi
    XX[..., nP:, nP:] = F.Xi_V
    C = F.Lambda @ Pi[..., :nP, :] @ XX
    return F.d_inv, Gamma1, C
