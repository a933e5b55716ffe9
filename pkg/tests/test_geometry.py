import numpy as np
import pytest

from fibril.errors import SingularFaddeevPopov
from fibril.geometry import (adapted_metric, adapted_pseudoinverse, det_factorization, faddeev_popov, frame,
                             frame_identities, sigma_and_derivatives)
from fibril.models import AdaptedPoint, get_model, sample_points, user_model

from test_models import VARIANTS


def _points(m, n=60, seed=0):
    Q, f, a = sample_points(m, n, np.random.default_rng(seed))
    Qs, ft, _ = m.to_adapted(Q, f)
    return AdaptedPoint(Qs, ft, a)


@pytest.mark.parametrize("name,kw", VARIANTS)
def test_frame_identities(name, kw):
    m = get_model(name, **kw)
    r = frame_identities(m, _points(m))
    assert max(r.values()) < 1e-9, {k: v for k, v in r.items() if v >= 1e-9}


def test_rotor_closed_forms():
    m = get_model("planar-rotor")
    p = AdaptedPoint(np.array([[1.5, 0.0]]), np.array([[0.3, -0.4]]), np.zeros((1, 1)))
    F = frame(m, p)
    x, u, w = 1.5, 0.3, -0.4
    d = x * x + u * u + w * w
    assert F.det_d[0] == pytest.approx(d)
    assert F.H[0] == pytest.approx(x * x / d)
    s, sA, sa, *_ = sigma_and_derivatives(m, p)
    assert s[0] == pytest.approx(np.log(d))
    assert np.allclose(sA[0], [2 * x / d, 0.0]) and np.allclose(sa[0], [2 * u / d, 2 * w / d])


def test_quaternion_orbit_determinant():
    m = get_model("quaternionic-adjoint")
    p = _points(m, 20, 4)
    r2 = np.sum(p.Qstar ** 2, -1)
    f2 = np.sum(p.ftilde ** 2, -1)
    assert np.allclose(frame(m, p).det_d, r2 * (r2 + f2) ** 2)


@pytest.mark.parametrize("name", ["planar-rotor", "quaternionic-adjoint"])
def test_pseudoinverse_product_and_det(name):
    m = get_model(name)
    p = _points(m, 30, 7)
    F = frame(m, p)
    nP, nV, nG = m.n_P, m.n_V, m.n_G
    prod = adapted_pseudoinverse(m, F) @ adapted_metric(m, F)
    assert np.allclose(prod[:, :nP, :nP], F.P_bot, atol=1e-10)
    assert np.allclose(prod[:, nP:, nP:], np.eye(nV + nG), atol=1e-10)
    full, dd, du, H = det_factorization(m, F)
    assert np.allclose(full, dd * du ** 2 * H, rtol=1e-10)


def test_h_is_positive_semidefinite_with_orbit_kernel():
    m = get_model("quaternionic-adjoint", metric="warped")
    F = frame(m, _points(m, 20, 1))
    ev = np.linalg.eigvalsh(F.h)
    assert ev.min() > -1e-12
    # the Killing directions are annihilated by the horizontal metric
    Kt = np.concatenate([F.K_P, F.K_V], -2)
    assert np.max(np.abs(F.GH @ Kt)) < 1e-10


def test_singular_gauge_detected():
    # the line Q^1 = 1 touches the unit circle at (0, 1)
    m = user_model({"base": "planar-rotor", "gauge": [[[1.0, [0, 1]], [-1.0, [0, 0]]]]})
    with pytest.raises(SingularFaddeevPopov):
        frame(m, AdaptedPoint(np.array([[0.0, 1.0]]), np.zeros((1, 2)), np.zeros((1, 1))))
    with pytest.raises(SingularFaddeevPopov):
        faddeev_popov(m, np.array([[0.0, 1.0]]))
    FP, _ = faddeev_popov(m, np.array([[0.6, 1.0]]))
    assert FP[0, 0, 0] == pytest.approx(0.6)


def test_nonlinear_gauge_identities():
    m = user_model({"base": "planar-rotor", "gauge": [[[1.0, [0, 1]], [-0.3, [2, 0]]]]})
    r = frame_identities(m, _points(m, 20, 2))
    assert max(r.values()) < 1e-7
