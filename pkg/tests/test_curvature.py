import numpy as np
import pytest

from fibril import curvature as cv
from fibril.geometry import frame
from fibril.models import AdaptedPoint, get_model, sample_points, user_model, validate_model

from test_models import VARIANTS

NONLINEAR = {"base": "planar-rotor", "gauge": [[[1.0, [0, 1]], [-0.3, [2, 0]]]],
             "metric_P": {"entries": {k: [[1.0, [0, 0]], [0.2, [2, 0]], [0.2, [0, 2]]] for k in ("0,0", "1,1")}}}


def _frame(m, n=60, seed=0):
    Q, f, a = sample_points(m, n, np.random.default_rng(seed))
    Qs, ft, _ = m.to_adapted(Q, f)
    return frame(m, AdaptedPoint(Qs, ft, a))


def _rotor_point(x=1.3, u=0.4, w=-0.2):
    return AdaptedPoint(np.array([[x, 0.0]]), np.array([[u, w]]), np.zeros((1, 1)))


@pytest.mark.parametrize("name,kw", VARIANTS)
def test_decomposition_and_zero_sums(name, kw):
    m = get_model(name, **kw)
    F = _frame(m)
    assert cv.closure_residual(m, F) < 1e-9
    jP, jV = cv.j2(m, F)
    sP, sV = cv.j2_sigma(m, F)
    assert np.max(np.abs(jP - sP)) < 1e-10 and np.max(np.abs(jV - sV)) < 1e-10
    s = cv.sigma_terms(m, F)
    assert np.max(np.abs(s["j1_sigma"])) < 1e-10
    Kt = np.concatenate([F.K_P, F.K_V], -2)
    assert np.max(np.abs(np.einsum("...a,...ag->...g", s["grad"], Kt))) < 1e-10
    pP, pV = cv.j1_projector(m, F)
    j1P, j1V = cv.j1(m, F)
    assert np.max(np.abs(pP - j1P)) < 1e-10 and np.max(np.abs(pV - j1V)) < 1e-10


def test_rotor_closed_forms():
    m = get_model("planar-rotor")
    x, u, w = 1.3, 0.4, -0.2
    d = x * x + u * u + w * w
    p = _rotor_point(x, u, w)
    D = cv.drift_bundle(m, p)
    assert np.allclose(np.r_[D.b_div_P[0], D.b_div_V[0]], [1 / (2 * x), 0, -u / (2 * x * x), -w / (2 * x * x)])
    assert np.allclose(D.b_div_G, 0)
    assert np.allclose(np.r_[D.j2_P[0], D.j2_V[0]], np.array([x, 0, u, w]) / (2 * d))
    s = cv.sigma_terms(m, p)
    assert s["lap_H"][0] == pytest.approx(2 / d) and s["grad_sq"][0] == pytest.approx(4 / d)
    assert D.J_integrand[0] == pytest.approx(-3 / (8 * d))
    di, g1, C = cv.holonomy_terms(m, p)
    assert di[0, 0, 0] == pytest.approx(1 / d) and abs(g1[0, 0]) < 1e-14
    F = frame(m, p)
    LGL = F.Lambda @ F.G_inv @ F.Lambda.swapaxes(-1, -2)
    assert np.allclose(di + C @ C.swapaxes(-1, -2), LGL)


def test_constant_orbit_metric_has_no_jacobian():
    m = get_model("planar-rotor", metric="cylinder", rep="trivial")
    F = _frame(m)
    assert np.max(np.abs(cv.jacobian_integrand(m, F))) < 1e-12
    jP, jV = cv.j2(m, F)
    assert np.max(np.abs(jP)) < 1e-12 and np.max(np.abs(jV)) < 1e-12


def test_nonlinear_gauge_closure():
    m = user_model(NONLINEAR)
    # polynomial metrics carry rounding at the 1e-10 level
    assert validate_model(m, n_samples=20, tol=1e-9).ok
    F = _frame(m, 20, 3)
    assert cv.closure_residual(m, F) < 1e-7
    jP, jV = cv.j2(m, F)
    sP, sV = cv.j2_sigma(m, F)
    assert np.max(np.abs(jP - sP)) < 1e-6


def test_tilde_form_matches_ito_on_linear_gauges():
    m = get_model("quaternionic-adjoint", metric="warped")
    F = _frame(m, 30, 5)
    assert np.allclose(cv.jacobian_integrand(m, F), cv.jacobian_integrand(m, F, form="tilde"), atol=1e-12)


def test_girsanov_integrands_rotor():
    m = get_model("planar-rotor")
    g = cv.girsanov_integrands(m, _rotor_point(1.0, 0.0, 0.0))
    assert np.allclose(g["u"][0], [0.5, 0, 0, 0])
    assert g["jsum"][0] == pytest.approx(3.0)
