import dataclasses

import numpy as np
import pytest

from fibril.errors import ActionNotIsometric, ConfigError, NonPositiveDefiniteMetric
from fibril.models import (AdaptedPoint, BUILTINS, get_model, qexp, qlog, qmul, sample_adapted_points,
                           sample_points, user_model, validate_model)

VARIANTS = [("planar-rotor", {}), ("planar-rotor", {"metric": "warped"}),
            ("planar-rotor", {"metric": "cylinder", "rep": "trivial"}), ("planar-rotor", {"metric": "cylinder"}),
            ("quaternionic-adjoint", {}), ("quaternionic-adjoint", {"metric": "warped"}),
            ("quaternionic-adjoint", {"metric": "cylinder"})]


@pytest.mark.parametrize("name,kw", VARIANTS)
def test_validate_builtins(name, kw):
    rep = validate_model(get_model(name, **kw), n_samples=100, seed=1)
    assert rep.ok, rep.residuals


def test_unknown_model():
    with pytest.raises(ConfigError):
        get_model("torus")
    with pytest.raises(ConfigError):
        get_model("planar-rotor", metric="hyperbolic")


def test_broken_isometry_detected():
    m = get_model("planar-rotor")
    bad = dataclasses.replace(m, metric_P=lambda Q: np.eye(2) + np.diag([0.3, 0.0]) * Q[..., :1, None] ** 2)
    with pytest.raises(ActionNotIsometric):
        validate_model(bad, n_samples=10)


def test_indefinite_metric_detected():
    m = get_model("planar-rotor")
    bad = dataclasses.replace(m, metric_V=np.diag([1.0, -1.0]))
    with pytest.raises(NonPositiveDefiniteMetric):
        validate_model(bad, n_samples=5)


def test_corrupted_structure_constants_fail():
    m = get_model("quaternionic-adjoint")
    bad = dataclasses.replace(m, structure_constants=1.5 * m.structure_constants)
    rep = validate_model(bad, n_samples=10)
    assert not rep.passed["generator_commutators"]


def test_potential_invariance():
    m = get_model("planar-rotor", potential={"c": 0.2, "Q2": 0.5, "f2": -0.1, "Qf": 0.3})
    rep = validate_model(m, n_samples=50)
    assert rep.residuals["potential_invariance"] < 1e-12
    with pytest.raises(ConfigError):
        get_model("quaternionic-adjoint", potential={"Qf": 1.0})


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_adapted_round_trip(name):
    m = get_model(name)
    Q, f, a = sample_points(m, 50, np.random.default_rng(2))
    Qs, ft, th = m.to_adapted(Q, f)
    assert np.max(np.abs(m.gauge(Qs))) < 1e-12
    assert np.all(Qs[:, 0] > 0)
    Q2, f2 = m.from_adapted(Qs, ft, th)
    assert np.allclose(Q2, Q, atol=1e-12) and np.allclose(f2, f, atol=1e-12)


def test_sampling_ranges():
    m = get_model("quaternionic-adjoint")
    Q, f, a = sample_points(m, 500, np.random.default_rng(0))
    r = np.linalg.norm(Q, axis=1)
    assert r.min() >= 0.5 and r.max() <= 2.0
    assert np.linalg.norm(f, axis=1).max() <= 2.0 and np.linalg.norm(a, axis=1).max() <= 1.0
    pts = sample_adapted_points(m, 5, np.random.default_rng(0))
    assert all(isinstance(p, AdaptedPoint) for p in pts)


def test_quaternion_helpers():
    rng = np.random.default_rng(3)
    a, b, c = (rng.uniform(-1, 1, (20, 3)) for _ in range(3))
    assert np.allclose(qlog(qexp(a)), a)
    q = lambda x: qexp(x)
    assert np.allclose(qmul(qmul(q(a), q(b)), q(c)), qmul(q(a), qmul(q(b), q(c))))
    m = get_model("quaternionic-adjoint")
    assert np.allclose(m.group_mult(m.group_mult(a, b), c), m.group_mult(a, m.group_mult(b, c)))


def test_group_volumes():
    assert get_model("planar-rotor").group_volume == pytest.approx(2 * np.pi)
    assert get_model("quaternionic-adjoint").group_volume == pytest.approx(2 * np.pi ** 2)


def test_user_model_nonlinear_gauge():
    desc = {"base": "planar-rotor", "gauge": [[[1.0, [0, 1]], [-0.3, [2, 0]]]]}
    m = user_model(desc)
    assert not m.gauge_linear and m.derivative_provider != "analytic"
    Q, f, _ = sample_points(m, 20, np.random.default_rng(5))
    Qs, ft, a = m.to_adapted(Q, f)
    assert np.max(np.abs(m.gauge(Qs))) < 1e-10
    assert validate_model(m, n_samples=20).ok
    with pytest.raises(ConfigError):
        user_model({"base": "quaternionic-adjoint", "gauge": [[[1.0, [0, 1, 0, 0]]]]})
