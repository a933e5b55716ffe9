import numpy as np
import pytest

from fibril import reduction as rd
from fibril import sde
from fibril.errors import ChartExit, ConfigError, PathFailureThreshold
from fibril.geometry import frame
from fibril.models import AdaptedPoint, get_model, user_model

SC = sde.PhysicalScales()
S0 = [1.0, 0.0, 0.5, 0.0]


def test_scales():
    assert SC.noise == 1.0
    with pytest.raises(ConfigError):
        sde.PhysicalScales(kappa_mode="imaginary")
    with pytest.raises(ConfigError):
        sde.PhysicalScales(mu2kappa=-1.0)


def test_config_errors():
    m = get_model("planar-rotor")
    with pytest.raises(ConfigError):
        sde.simulate(m, SC, "reduced", S0, 0.2, 0.03, 10, 0)
    with pytest.raises(ConfigError):
        sde.simulate(m, SC, "reduced", [1.0, 0.2, 0.5, 0.0], 0.1, 0.01, 10, 0)
    with pytest.raises(ConfigError):
        sde.simulate(m, SC, "sideways", S0, 0.1, 0.01, 10, 0)
    with pytest.raises(ConfigError):
        sde.simulate(m, SC, "reduced", S0, 0.1, 0.01, 10, 0, dW=np.zeros((10, 3, 4)))
    with pytest.raises(ConfigError):
        sde.simulate(get_model("planar-rotor", metric="warped"), SC, "reduced", S0, 0.1, 0.01, 5, 0, backend="kernel")


def test_chart_exit_single_step():
    m = get_model("planar-rotor")
    with pytest.raises(ChartExit):
        sde.step_original(m, SC, np.array([1e-4, 0.0, 0.0, 0.0]), 1e-3, np.zeros(4))
    with pytest.raises(ChartExit):
        sde.step_reduced(m, SC, np.array([0.05, 0.0, 0.0, 0.0]), 1e-3, np.array([-0.2, 0, 0, 0]))


def test_failure_threshold():
    m = get_model("planar-rotor")
    with pytest.raises(PathFailureThreshold):
        sde.simulate(m, SC, "reduced", [0.02, 0.0, 0.0, 0.0], 0.1, 0.01, 200, 0)
    ens = sde.simulate(m, SC, "reduced", [0.02, 0.0, 0.0, 0.0], 0.1, 0.01, 200, 0, max_failure_fraction=1.0)
    assert ens.failed.any() and len(ens.failures) == ens.failed.sum()
    i = int(np.flatnonzero(ens.failed)[0])
    assert ens.failures[0][0] == i and ens.failures[0][1] >= 0


@pytest.mark.parametrize("kind", sde.KINDS)
def test_kernel_matches_generic(kind):
    m = get_model("planar-rotor", potential={"c": 0.1, "Q2": 0.2, "f2": -0.1, "Qf": 0.05})
    start = S0 + [0.0] if kind == "adapted" else S0
    irrep = rd.so2_charge(2) if kind.startswith("reduced") else None
    a = sde.simulate(m, SC, kind, start, 0.05, 1e-3, 64, 3, irrep=irrep)
    b = sde.simulate(m, SC, kind, start, 0.05, 1e-3, 64, 3, irrep=irrep, backend="generic")
    assert a.backend != "generic" and b.backend == "generic"
    assert np.array_equal(a.failed, b.failed)
    assert np.allclose(a.final, b.final, atol=1e-10)
    assert np.allclose(a.potential_integral, b.potential_integral, atol=1e-12)
    assert np.allclose(a.log_girsanov, b.log_girsanov, atol=1e-10)
    assert np.allclose(a.log_girsanov_closed, b.log_girsanov_closed, atol=1e-10)
    if irrep is not None:
        assert np.allclose(a.ordered_exp, b.ordered_exp, atol=1e-10)


def test_determinism_and_chunking():
    m = get_model("planar-rotor")
    a = sde.simulate(m, SC, "reduced-noj2", S0, 0.1, 1e-2, 50, 9)
    b = sde.simulate(m, SC, "reduced-noj2", S0, 0.1, 1e-2, 50, 9, chunk=7, workers=3)
    c = sde.simulate(m, SC, "reduced-noj2", S0, 0.1, 1e-2, 50, 10)
    assert np.array_equal(a.final, b.final) and np.array_equal(a.log_girsanov, b.log_girsanov)
    assert not np.array_equal(a.final, c.final)
    # path i is the same path whatever the ensemble size
    d = sde.simulate(m, SC, "reduced-noj2", S0, 0.1, 1e-2, 20, 9)
    assert np.array_equal(a.final[:20], d.final)


def test_recorded_trajectory():
    m = get_model("quaternionic-adjoint")
    ens = sde.simulate(m, SC, "reduced", [1, 0, 0, 0, 0.3, -0.2, 0.1], 0.02, 1e-2, 4, 1, record=True)
    tr = ens.trajectory(2)
    assert tr.states.shape == (3, 7) and tr.dW.shape == (2, 7)
    assert np.array_equal(tr.states[-1], ens.final[2])
    with pytest.raises(ValueError):
        sde.simulate(m, SC, "reduced", [1, 0, 0, 0, 0.3, -0.2, 0.1], 0.02, 1e-2, 2, 1).trajectory(0)


def test_one_step_covariance_quaternion():
    # Var of one reduced step equals mu2kappa h dt; check entrywise against the MC error
    m = get_model("quaternionic-adjoint", metric="warped")
    s0 = np.array([1.2, 0, 0, 0, 0.3, -0.5, 0.2])
    dt, n = 1e-4, 20000
    ens = sde.simulate(m, SC, "reduced", s0, dt, dt, n, 4)
    X = (ens.final - s0) / np.sqrt(dt)
    F = frame(m, AdaptedPoint(s0[None, :4], s0[None, 4:], np.zeros((1, 3))))
    h = F.h[0]
    Xc = X - X.mean(0)
    prod = Xc[:, :, None] * Xc[:, None, :]
    z = np.abs(prod.mean(0) - h) / (prod.std(0) / np.sqrt(n) + 1e-300)
    assert np.max(z[np.abs(h) > 1e-12]) < 4.5


def test_reproject_nonlinear_gauge():
    m = user_model({"base": "planar-rotor", "gauge": [[[1.0, [0, 1]], [-0.3, [2, 0]]]]})
    s = np.array([1.0, 0.3, 0.4, 0.1])
    out = sde.step_reduced(m, SC, s, 1e-3, np.array([0.01, -0.02, 0.01, 0.0]))
    assert abs(m.gauge(out[None, :2])[0, 0]) < 1e-10


def test_stopped_weights_are_frozen():
    m = get_model("planar-rotor")
    ens = sde.simulate(m, SC, "reduced-noj2", [0.05, 0.0, 0.0, 0.0], 0.2, 1e-2, 300, 2, max_failure_fraction=1.0)
    assert ens.failed.any()
    assert np.all(np.isfinite(ens.log_girsanov)) and np.all(ens.final[ens.failed, 0] > 0)
