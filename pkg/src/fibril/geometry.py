"""Adapted-coordinate geometry at points of the gauge surface.

Index conventions (numpy axes): K_P[A, alpha], chi_grad[mu, A],
Lambda[nu, E], N_PP[A, C], N_VP[a, B], P_bot[A, B], h blocks
h[row, col] contravariant.  The ambient coordinate vector is (Q, f) with
n = n_P + n_V entries; "tilde" blocks are n x n matrices over it.

Derivatives with respect to Q* are always projected: d*_A = P_bot^D_A d_D.
Every function accepts batched adapted points (leading axes on Qstar,
ftilde, a).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._jet import Jet, embed_f, embed_Q, hstack, vstack
from .errors import NonPositiveOrbitMetric, SingularFaddeevPopov
from .models import AdaptedPoint, ModelSpec

COND_MAX = 1e12


def blockdiag(A, B):
    A, B = np.asarray(A), np.asarray(B)
    batch = np.broadcast_shapes(A.shape[:-2], B.shape[:-2])
    out = np.zeros(batch + (A.shape[-2] + B.shape[-2], A.shape[-1] + B.shape[-1]))
    out[..., : A.shape[-2], : A.shape[-1]] = A
    out[..., A.shape[-2]:, A.shape[-1]:] = B
    return out


def _jet_blockdiag(A: Jet, B: Jet):
    return Jet(blockdiag(A.v, B.v), _bd_derivs(A.d, B.d))


def _bd_derivs(dA, dB):
    n = dA.shape[-3]
    batch = np.broadcast_shapes(dA.shape[:-3], dB.shape[:-3])
    out = np.zeros(batch + (n, dA.shape[-2] + dB.shape[-2], dA.shape[-1] + dB.shape[-1]))
    out[..., : dA.shape[-2], : dA.shape[-1]] = dA
    out[..., dA.shape[-2]:, dA.shape[-1]:] = dB
    return out


def killing_fields(m: ModelSpec, Q, f):
    """(K_P, K_V): K^A_alpha = dF^A/da^alpha at the identity, K^a_alpha = (Jbar_alpha f)^a."""
    return m.killing_P(np.asarray(Q, dtype=float)), m.killing_V(np.asarray(f, dtype=float))


def faddeev_popov(m: ModelSpec, Q):
    """Phi^beta_mu = chi^beta_A K^A_mu and its inverse (condition number guard 1e12)."""
    Q = np.asarray(Q, dtype=float)
    FP = m.gauge_grad(Q) @ m.killing_P(Q)
    _check_fp(FP)
    return FP, np.linalg.inv(FP)


def _check_fp(FP):
    cond = np.linalg.cond(FP)
    bad = ~np.isfinite(cond) | (cond > COND_MAX)
    if np.any(bad):
        raise SingularFaddeevPopov(f"Faddeev-Popov condition number {np.max(cond):.3e} > {COND_MAX:.0e}")


def _chol_checked(M, exc, what):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as e:
        raise exc(f"{what} is not positive definite") from e


@dataclass(frozen=True)
class GeometricFrame:
    """All tensors of the adapted geometry at one (possibly batched) point."""
    point: AdaptedPoint
    K_P: np.ndarray
    K_V: np.ndarray
    chi_grad: np.ndarray
    FP: np.ndarray
    FP_inv: np.ndarray
    Lambda: np.ndarray
    N_PP: np.ndarray
    N_VP: np.ndarray
    P_bot: np.ndarray
    gamma: np.ndarray
    gamma_prime: np.ndarray
    gamma_inv: np.ndarray
    d: np.ndarray
    d_inv: np.ndarray
    det_d: np.ndarray
    GH: np.ndarray  # full n x n horizontal metric
    Pi_tilde: np.ndarray  # full n x n horizontal projector
    A_conn: np.ndarray  # n_G x n
    A_gamma: np.ndarray  # n_G x n_P
    H: np.ndarray
    h: np.ndarray  # full n x n contravariant h
    Xi: np.ndarray  # chol(G^-1)
    Xi_V: np.ndarray  # chol(G_V^-1)
    X1: np.ndarray  # n x n diffusion factor with X1 X1^T = h
    G: np.ndarray
    G_inv: np.ndarray
    surface_basis: np.ndarray  # orthonormal basis of ker chi' (n_P x (n_P - n_G))
    jets: dict = field(repr=False, compare=False, default_factory=dict)

    # block views
    @property
    def n_P(self):
        return self.K_P.shape[-2]

    @property
    def GH_PP(self):
        return self.GH[..., : self.n_P, : self.n_P]

    @property
    def GH_PV(self):
        return self.GH[..., : self.n_P, self.n_P:]

    @property
    def GH_VV(self):
        return self.GH[..., self.n_P:, self.n_P:]

    @property
    def h_PP(self):
        return self.h[..., : self.n_P, : self.n_P]

    @property
    def h_PV(self):
        return self.h[..., : self.n_P, self.n_P:]

    @property
    def h_VV(self):
        return self.h[..., self.n_P:, self.n_P:]

    def as_dict(self):
        keys = ["K_P", "K_V", "chi_grad", "FP", "FP_inv", "Lambda", "N_PP", "N_VP", "P_bot",
                "gamma", "gamma_prime", "gamma_inv", "d", "d_inv", "det_d", "GH", "Pi_tilde",
                "A_conn", "A_gamma", "H", "h", "Xi", "Xi_V", "X1"]
        out = {k: np.asarray(getattr(self, k)) for k in keys}
        out.update(Qstar=self.point.Qstar, ftilde=self.point.ftilde, a=self.point.a)
        return out


def frame(m: ModelSpec, p: AdaptedPoint) -> GeometricFrame:
    Q = np.asarray(p.Qstar, dtype=float)
    f = np.asarray(p.ftilde, dtype=float)
    nP, nV, nG = m.n_P, m.n_V, m.n_G
    n = nP + nV
    batch = Q.shape[:-1]

    Gv = m.metric_P(Q)
    dG, _ = m.metric_P_derivs(Q)
    G = embed_Q(Gv, dG, n)
    _chol_checked(Gv, NonPositiveOrbitMetric, "metric_P")
    Ginv = G.inv()
    K = embed_Q(m.killing_P(Q), m.killing_P_derivs(Q)[0], n)
    chi = embed_Q(m.gauge_grad(Q), m.gauge_hess(Q), n)
    KVv = m.killing_V(f)
    dKV = np.broadcast_to(np.einsum("gac->cag", m.generators_V), batch + (nV, nV, nG))
    KV = embed_f(KVv, dKV, n)
    GV = Jet.const(m.metric_V, n)
    GVinv = Jet.const(np.linalg.inv(m.metric_V), n)

    FP = chi @ K
    _check_fp(FP.v)
    FPinv = FP.inv()
    Lam = FPinv @ chi
    IP = np.eye(nP)
    N = IP - K @ Lam
    NVP = -(KV @ Lam)
    gam = K.T @ G @ K
    gamp = KV.T @ GV @ KV
    d = gam + gamp
    _chol_checked(d.v, NonPositiveOrbitMetric, "orbit metric d")
    dinv = d.inv()
    S = chi @ Ginv @ chi.T
    Pb = IP - Ginv @ chi.T @ S.inv() @ chi

    Kt = vstack([K, KV])
    Gb = _jet_blockdiag(G, GV)
    Gbinv = _jet_blockdiag(Ginv, GVinv)
    GH = Gb - Gb @ Kt @ dinv @ Kt.T @ Gb
    Pi = np.eye(n) - Kt @ dinv @ Kt.T @ Gb
    Nt = vstack([N, NVP])
    h = Nt @ Ginv @ Nt.T + _jet_blockdiag(Jet.const(np.zeros((nP, nP)), n), GVinv)

    # Sigma-adapted orthonormal basis: ker chi' in P, identity in V
    _, _, Vh = np.linalg.svd(chi.v)
    E = Vh[..., nG:, :].swapaxes(-1, -2)
    # the basis turns with the surface: dE = dPe E with Pe the Euclidean projector on ker chi'
    Pe = IP - chi.T @ (chi @ chi.T).inv() @ chi
    Ej = Jet(E, Pe.d @ E[..., None, :, :])
    Bfull = _jet_blockdiag(Ej, Jet.const(np.broadcast_to(np.eye(nV), batch + (nV, nV)), n))
    MH = Bfull.T @ GH @ Bfull
    lnH = MH.logdet()
    lnd = d.logdet()

    Pfull = blockdiag(Pb.v, np.eye(nV))
    Xi = _chol_checked(Ginv.v, NonPositiveOrbitMetric, "inverse metric_P")
    XiV = np.broadcast_to(np.linalg.cholesky(GVinv.v), batch + (nV, nV))
    X1 = np.zeros(batch + (n, n))
    X1[..., :, :nP] = Nt.v @ Xi
    X1[..., nP:, nP:] = XiV
    gam_inv = np.linalg.inv(gam.v)
    jets = dict(G=G, Ginv=Ginv, K=K, chi=chi, KV=KV, Lam=Lam, N=N, NVP=NVP, d=d, dinv=dinv,
                gam=gam, Pb=Pb, GH=GH, Pi=Pi, h=h, lnH=lnH, lnd=lnd, Kt=Kt, Gb=Gb, Gbinv=Gbinv,
                Pfull=Pfull)
    return GeometricFrame(
        point=p, K_P=K.v, K_V=KVv, chi_grad=chi.v, FP=FP.v, FP_inv=FPinv.v, Lambda=Lam.v,
        N_PP=N.v, N_VP=NVP.v, P_bot=Pb.v, gamma=gam.v, gamma_prime=gamp.v, gamma_inv=gam_inv,
        d=d.v, d_inv=dinv.v, det_d=np.exp(lnd.v[..., 0, 0]), GH=GH.v, Pi_tilde=Pi.v,
        A_conn=(dinv @ Kt.T @ Gb).v, A_gamma=gam_inv @ K.v.swapaxes(-1, -2) @ Gv,
        H=np.exp(lnH.v[..., 0, 0]), h=h.v, Xi=Xi, Xi_V=XiV, X1=X1, G=Gv, G_inv=Ginv.v,
        surface_basis=E, jets=jets)


def _frame_at(m, p):
    return p if isinstance(p, GeometricFrame) else frame(m, p)


# ---------------------------------------------------------------- adapted metric

def adapted_metric(m: ModelSpec, p: AdaptedPoint, form: str = "metric2c"):
    """Full metric in the (Q*, f~, a) basis.

    form="metric2c": block assembly with P_bot on every Q*-leg (symmetric);
    form="connection": G^H + u^T-weighted connection form, sum of the
    horizontal part and the vertical part omega^T d omega.
    """
    F = _frame_at(m, p)
    a = np.asarray(F.point.a, dtype=float)
    ub = m.frame_u(a)
    nP, nV, nG = m.n_P, m.n_V, m.n_G
    Pb, G, GV = F.P_bot, F.G, m.metric_V
    if form == "metric2c":
        Ku = F.K_P @ ub
        KVu = F.K_V @ ub
        PP = Pb.swapaxes(-1, -2) @ G @ Pb
        PG = Pb.swapaxes(-1, -2) @ G @ Ku
        VG = GV @ KVu
        GG = ub.swapaxes(-1, -2) @ F.d @ ub
        top = np.concatenate([PP, np.zeros(PP.shape[:-1] + (nV,)), PG], -1)
        mid = np.concatenate([np.zeros(VG.shape[:-2] + (nV, nP)), np.broadcast_to(GV, VG.shape[:-2] + (nV, nV)), VG], -1)
        bot = np.concatenate([PG.swapaxes(-1, -2), VG.swapaxes(-1, -2), GG], -1)
        return np.concatenate([top, mid, bot], -2)
    if form == "connection":
        # omega = A_D dQ*^D + A_p df^p + ubar da  (right-invariant version with ubar)
        Pfull = blockdiag(Pb, np.eye(nV))
        GH = Pfull.swapaxes(-1, -2) @ F.GH @ Pfull
        om = np.concatenate([F.A_conn @ Pfull, ub], -1)
        hor = np.zeros(GH.shape[:-2] + (nP + nV + nG, nP + nV + nG))
        hor[..., : nP + nV, : nP + nV] = GH
        return hor + om.swapaxes(-1, -2) @ F.d @ om
    raise ValueError(form)


def adapted_pseudoinverse(m: ModelSpec, p: AdaptedPoint, form: str = "metric2b"):
    """Pseudoinverse of the adapted metric.

    form="metric2b": Lambda-form blocks; form="invers_metric": gamma-connection form.
    """
    F = _frame_at(m, p)
    a = np.asarray(F.point.a, dtype=float)
    vb = m.frame_v(a)
    nP = m.n_P
    Gi, Lam, N, NVP = F.G_inv, F.Lambda, F.N_PP, F.N_VP
    LGL = Lam @ Gi @ Lam.swapaxes(-1, -2)
    hPP, hPV, hVV = F.h_PP, F.h_PV, F.h_VV
    T = lambda x: x.swapaxes(-1, -2)
    if form == "metric2b":
        PG = N @ Gi @ T(Lam) @ T(vb)
        VG = -F.K_V @ LGL @ T(vb)
        GG = vb @ LGL @ T(vb)
    elif form == "invers_metric":
        Ag = F.A_gamma
        M = F.gamma_inv + Ag @ hPP @ T(Ag)  # equals Lambda G^-1 Lambda^T
        PG = -hPP @ T(Ag) @ T(vb)
        VG = -F.K_V @ M @ T(vb)
        GG = vb @ M @ T(vb)
        hPV = hPP @ T(Ag) @ T(F.K_V)
        hVV = np.linalg.inv(m.metric_V) + F.K_V @ M @ T(F.K_V)
    else:
        raise ValueError(form)
    top = np.concatenate([hPP, hPV, PG], -1)
    mid = np.concatenate([T(hPV), hVV, VG], -1)
    bot = np.concatenate([T(PG), T(VG), GG], -1)
    return np.concatenate([top, mid, bot], -2)


def det_factorization(m: ModelSpec, p: AdaptedPoint):
    """(det_full, det_d, det_ubar, H): det of the adapted metric on the Sigma-adapted
    basis, computed directly and as d (det ubar)^2 H."""
    F = _frame_at(m, p)
    Gt = adapted_metric(m, F)
    E = F.surface_basis
    Bt = blockdiag(blockdiag(E, np.eye(m.n_V)), np.eye(m.n_G))
    det_full = np.linalg.det(Bt.swapaxes(-1, -2) @ Gt @ Bt)
    det_u = np.linalg.det(m.frame_u(np.asarray(F.point.a, dtype=float)))
    return det_full, F.det_d, det_u, F.H


# ---------------------------------------------------------------- sigma = ln det d

def _hess_d(m: ModelSpec, F: GeometricFrame):
    """Second partial derivatives of d over the ambient coordinates: [..., k, l, mu, nu]."""
    Q = np.asarray(F.point.Qstar, dtype=float)
    nP, nV, nG = m.n_P, m.n_V, m.n_G
    n = nP + nV
    G = F.G
    dG, d2G = m.metric_P_derivs(Q)
    K = F.K_P
    dK, d2K = m.killing_P_derivs(Q)
    T = lambda x: x.swapaxes(-1, -2)
    Kk = K[..., None, None, :, :]
    dKk, dKl = dK[..., :, None, :, :], dK[..., None, :, :, :]
    dGk, dGl = dG[..., :, None, :, :], dG[..., None, :, :, :]
    Gk = G[..., None, None, :, :]
    hq = (T(d2K) @ Gk @ Kk + T(dKl) @ dGk @ Kk + T(dKl) @ Gk @ dKk
          + T(dKk) @ dGl @ Kk + T(Kk) @ d2G @ Kk + T(Kk) @ dGl @ dKk
          + T(dKk) @ Gk @ dKl + T(Kk) @ dGk @ dKl + T(Kk) @ Gk @ d2K)
    dKV = np.einsum("gac->cag", m.generators_V)  # [c, a, alpha]
    GV = m.metric_V
    hv = T(dKV[None, :]) @ GV @ dKV[:, None] + T(dKV[:, None]) @ GV @ dKV[None, :]
    out = np.zeros(Q.shape[:-1] + (n, n, nG, nG))
    out[..., :nP, :nP, :, :] = hq
    out[..., nP:, nP:, :, :] = hv
    return out


def sigma_and_derivatives(m: ModelSpec, p: AdaptedPoint):
    """sigma = ln det d with P_bot-projected first and second derivatives.

    Returns (sigma, s_A, s_a, s_AB, s_Ab, s_ab); also available as full arrays via
    sigma_full().
    """
    s, g, H2 = sigma_full(m, p)
    nP = m.n_P
    return s, g[..., :nP], g[..., nP:], H2[..., :nP, :nP], H2[..., :nP, nP:], H2[..., nP:, nP:]


def sigma_full(m: ModelSpec, p: AdaptedPoint):
    """(sigma, grad[n], hess[n, n]) with projected derivatives; hess[A, B] = d*_A d*_B sigma."""
    F = _frame_at(m, p)
    J = F.jets
    lnd = J["lnd"]
    dd = J["d"].d  # [k, mu, nu]
    di = F.d_inv
    g_raw = lnd.d[..., 0, 0]
    Hd = _hess_d(m, F)
    A = di[..., None, :, :] @ dd  # d^-1 d_k d
    h_raw = (np.einsum("...mn,...klnm->...kl", di, Hd)
             - np.einsum("...kij,...lji->...kl", A, A))
    Pb = J["Pb"]
    nV = m.n_V
    Pf = blockdiag(Pb.v, np.eye(nV))
    dPf = _bd_derivs(Pb.d, np.zeros(Pb.d.shape[:-3] + (Pb.d.shape[-3], nV, nV)))
    grad = np.einsum("...dk,...d->...k", Pf, g_raw)
    hess = (Pf.swapaxes(-1, -2) @ h_raw @ Pf
            + np.einsum("...da,...deb,...e->...ab", Pf, dPf, g_raw))
    return lnd.v[..., 0, 0], grad, hess


# ---------------------------------------------------------------- identity residuals

def frame_identities(m: ModelSpec, p: AdaptedPoint) -> dict:
    """Max residual of every frame-level identity at p (projector algebra,
    Killing relations, horizontal-metric properties, pseudoinverse product,
    determinant factorization, Lambda identity)."""
    F = _frame_at(m, p)
    nP, nV, nG = m.n_P, m.n_V, m.n_G
    n = nP + nV
    T = lambda x: x.swapaxes(-1, -2)
    mx = lambda x: float(np.max(np.abs(x))) if np.size(x) else 0.0
    N, NVP, Pb, K, chi = F.N_PP, F.N_VP, F.P_bot, F.K_P, F.chi_grad
    r = {}
    r["N_idempotent"] = mx(N @ N - N)
    r["N_kills_K"] = mx(N @ K)
    r["chi_N"] = mx(chi @ N)
    r["Pbot_idempotent"] = mx(Pb @ Pb - Pb)
    r["chi_Pbot"] = mx(chi @ Pb)
    r["N_Pbot"] = mx(N @ Pb - Pb)
    r["Pbot_N"] = mx(Pb @ N - N)
    Pi, GH = F.Pi_tilde, F.GH
    Kt = np.concatenate([K, F.K_V], -2)
    Nt = np.concatenate([N, NVP], -2)
    r["Pi_kills_K"] = mx(Pi @ Kt)
    r["Pi_N"] = mx(Pi @ Nt - Pi[..., :, :nP])
    r["PiPP_N"] = mx(N @ Pi[..., :nP, :nP] - N)
    r["PiPV_N"] = mx(N @ Pi[..., :nP, nP:])
    # Killing relations
    Q = np.asarray(F.point.Qstar, dtype=float)
    dG, _ = m.metric_P_derivs(Q)
    dK, _ = m.killing_P_derivs(Q)
    kill = (np.einsum("...Aa,...ACD->...aCD", K, dG) + np.einsum("...CR,...DRa->...aCD", F.G, dK)
            + np.einsum("...RD,...CRa->...aCD", F.G, dK))
    r["killing_P"] = mx(kill)
    Jb = m.generators_V
    r["killing_V"] = mx(m.metric_V @ Jb + T(Jb) @ m.metric_V)
    # horizontal metric properties
    Gi, GVi = F.G_inv, np.linalg.inv(m.metric_V)
    r["GH_N"] = mx(GH @ Nt - GH[..., :, :nP])
    r["GH_Pi_VP"] = mx(GVi @ T(GH[..., :nP, nP:]) - Pi[..., nP:, :nP])
    r["GH_Pi_PP"] = mx(Gi @ GH[..., :nP, :nP] - Pi[..., :nP, :nP])
    r["NVP_Pi"] = mx(NVP @ Pi[..., :nP, :nP] + Pi[..., nP:, :nP] - NVP)
    # Lambda identity below the gamma-connection pseudoinverse
    LGL = F.Lambda @ Gi @ T(F.Lambda)
    r["Lambda_identity"] = mx(LGL - F.gamma_inv - F.A_gamma @ F.h_PP @ T(F.A_gamma))
    # pseudoinverse product and alternative assemblies
    Gt = adapted_metric(m, F)
    Gs = adapted_pseudoinverse(m, F)
    target = blockdiag(blockdiag(Pb, np.eye(nV)), np.eye(nG))
    r["pseudoinverse_product"] = mx(Gs @ Gt - target)
    r["metric_forms"] = mx(Gt - adapted_metric(m, F, "connection"))
    r["pseudoinverse_forms"] = mx(Gs - adapted_pseudoinverse(m, F, "invers_metric"))
    det_full, det_d, det_u, H = det_factorization(m, F)
    r["det_factorization"] = mx((det_full - det_d * det_u ** 2 * H) / det_full)
    r["d_symmetric"] = mx(F.d - T(F.d))
    r["h_diffusion"] = mx(F.X1 @ T(F.X1) - F.h)
    return r
