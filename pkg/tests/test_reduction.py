import numpy as np
import pytest

from fibril import curvature as cv
from fibril import reduction as rd
from fibril import sde
from fibril.errors import ConfigError, InsufficientSamples, MissingIncrements
from fibril.models import get_model

SC = sde.PhysicalScales()
ROTOR = get_model("planar-rotor")
QUAT = get_model("quaternionic-adjoint")
Q0 = [1.0, 0, 0, 0, 0.3, -0.2, 0.1]


def _traj(states, dt, dW=None):
    states = np.asarray(states, float)
    times = dt * np.arange(len(states))
    return sde.Trajectory(times, states, None if dW is None else np.asarray(dW, float), "reduced", 0)


# ---------------------------------------------------------------- irreps

@pytest.mark.parametrize("spec,m", [("trivial", ROTOR), ("so2:3", ROTOR), ("trivial", QUAT), ("su2:1/2", QUAT)])
def test_irreps_are_representations(spec, m):
    r = rd.check_irrep(rd.parse_irrep(spec, m), m)
    assert r["commutators"] < 1e-12 and r["homomorphism"] < 1e-12


def test_parse_irrep_rejects_mismatch():
    with pytest.raises(ConfigError):
        rd.parse_irrep("su2:1/2", ROTOR)
    with pytest.raises(ConfigError):
        rd.parse_irrep("so2:1", QUAT)


def test_spin_half_is_unitary_with_unit_determinant():
    D = rd.su2_spin_half()(np.random.default_rng(0).uniform(-2, 2, (10, 3)))
    assert np.allclose(D @ np.conj(D.swapaxes(-1, -2)), np.eye(2))
    assert np.allclose(np.linalg.det(D), 1.0)


# ---------------------------------------------------------------- Haar

@pytest.mark.parametrize("m", [ROTOR, QUAT])
def test_haar_normalized(m):
    assert rd.haar_average(lambda a: np.ones(len(a)), m) == pytest.approx(1.0, abs=1e-12)


def test_haar_schur_orthogonality():
    assert abs(rd.haar_average(lambda a: rd.so2_charge(2)(a)[:, 0, 0], ROTOR)) < 1e-10
    assert rd.haar_average(lambda a: np.cos(a[:, 0]) ** 2, ROTOR) == pytest.approx(0.5, abs=1e-12)
    D = rd.su2_spin_half()
    assert np.max(np.abs(rd.haar_average(D, QUAT))) < 1e-10
    assert rd.haar_average(lambda a: np.abs(D(a)[:, 0, 0]) ** 2, QUAT) == pytest.approx(0.5, abs=1e-10)


def test_haar_node_limit():
    with pytest.raises(ConfigError):
        rd.haar_nodes(QUAT, su2_shape=(64, 32, 64))


# ---------------------------------------------------------------- pathwise functionals

def test_feynman_kac():
    states = [[1.0, 0, 0.5, 0], [1.1, 0, 0.4, 0], [1.2, 0, 0.3, 0]]
    assert rd.feynman_kac_weight(_traj(states, 0.1), ROTOR, SC) == 1.0
    m = get_model("planar-rotor", potential={"c": 0.3})
    sc = sde.PhysicalScales(mu2kappa=2.0, mass=0.5)
    assert rd.feynman_kac_weight(_traj(states, 0.1), m, sc) == pytest.approx(np.exp(0.3 * 0.2))
    m2 = get_model("planar-rotor", potential={"c": 0.3, "Q2": 0.2, "f2": -0.1})
    m3 = get_model("planar-rotor", potential={"c": 0.8, "Q2": 0.2, "f2": -0.1})
    ratio = rd.feynman_kac_weight(_traj(states, 0.1), m3, SC) / rd.feynman_kac_weight(_traj(states, 0.1), m2, SC)
    assert ratio == pytest.approx(np.exp(0.5 * 0.2))


def test_girsanov_single_step():
    dt, dW1 = 1e-3, 0.02
    tr = _traj([[1.0, 0, 0, 0], [1.02, 0, 0, 0]], dt, [[dW1, 0, 0, 0]])
    assert rd.girsanov_log_weight_stochastic(tr, ROTOR, SC) == pytest.approx(0.5 * dW1 - dt / 8, abs=1e-14)


def test_girsanov_constant_orbit_metric_is_zero():
    m = get_model("planar-rotor", metric="cylinder", rep="trivial")
    ens = sde.simulate(m, SC, "reduced", [1.0, 0, 0.5, 0], 0.05, 1e-2, 5, 0, record=True)
    tr = ens.trajectory(0)
    assert abs(rd.girsanov_log_weight_stochastic(tr, m, SC)) < 1e-14
    assert abs(rd.girsanov_log_weight_closed(tr, m, SC)) < 1e-14


def test_zero_horizon():
    tr = _traj([[1.0, 0, 0.5, 0]], 1e-2, np.zeros((0, 4)))
    assert rd.girsanov_log_weight_stochastic(tr, ROTOR, SC) == 0.0
    assert rd.girsanov_log_weight_closed(tr, ROTOR, SC) == 0.0
    assert np.array_equal(rd.ordered_exponential(tr, ROTOR, SC, rd.so2_charge(1)), np.eye(1))


def test_missing_increments():
    tr = _traj([[1.0, 0, 0.5, 0], [1.1, 0, 0.5, 0]], 1e-2)
    with pytest.raises(MissingIncrements):
        rd.girsanov_log_weight_stochastic(tr, ROTOR, SC)
    with pytest.raises(MissingIncrements):
        rd.ordered_exponential(tr, ROTOR, SC, rd.so2_charge(1))


def test_recorded_functionals_match_ensemble():
    ens = sde.simulate(QUAT, SC, "reduced", Q0, 0.05, 1e-2, 3, 2, record=True, irrep=rd.su2_spin_half())
    for i in range(3):
        tr = ens.trajectory(i)
        assert rd.girsanov_log_weight_stochastic(tr, QUAT, SC) == pytest.approx(ens.log_girsanov[i], abs=1e-12)
        assert rd.girsanov_log_weight_closed(tr, QUAT, SC) == pytest.approx(ens.log_girsanov_closed[i], abs=1e-12)
        U = rd.ordered_exponential(tr, QUAT, SC, rd.su2_spin_half())
        assert np.allclose(U, ens.ordered_exp[i], atol=1e-12)


# ---------------------------------------------------------------- ordered exponential

def test_trivial_ordered_exponential_is_identity():
    ens = sde.simulate(QUAT, SC, "reduced", Q0, 0.05, 1e-2, 4, 0, irrep=rd.trivial_irrep(3))
    assert np.array_equal(ens.ordered_exp, np.ones((4, 1, 1), complex))


def test_so2_modulus_is_real_exponent():
    ens = sde.simulate(ROTOR, SC, "reduced", [1.0, 0, 0.5, 0], 0.1, 1e-2, 20, 0, irrep=rd.so2_charge(1),
                       record=True, backend="generic")
    # the charge generator is pure imaginary, so |U| = exp(-1/2 k^2 int d^-1 dt) exactly
    for i in range(3):
        tr = ens.trajectory(i)
        F = rd._traj_frames(ROTOR, tr)
        di = cv.holonomy_terms(ROTOR, F)[0][:-1, 0, 0]
        assert abs(ens.ordered_exp[i, 0, 0]) == pytest.approx(np.exp(-0.5 * np.sum(di) * 1e-2), rel=1e-12)


def test_opposite_charges_conjugate():
    a = sde.simulate(ROTOR, SC, "reduced", [1.0, 0, 0.5, 0], 0.1, 1e-2, 50, 4, irrep=rd.so2_charge(2))
    b = sde.simulate(ROTOR, SC, "reduced", [1.0, 0, 0.5, 0], 0.1, 1e-2, 50, 4, irrep=rd.so2_charge(-2))
    assert np.allclose(a.ordered_exp, np.conj(b.ordered_exp), atol=1e-14)


def test_su2_exp_and_linear_agree_in_mean():
    kw = dict(irrep=rd.su2_spin_half())
    a = sde.simulate(QUAT, SC, "reduced", Q0, 0.1, 1e-2, 300, 5, **kw)
    b = sde.simulate(QUAT, SC, "reduced", Q0, 0.1, 1e-2, 300, 5, ordered="linear", **kw)
    ma, mb = a.ordered_exp.mean(0), b.ordered_exp.mean(0)
    assert np.max(np.abs(ma - mb)) < 0.1 * np.max(np.abs(ma))
    # exp steps are exactly unitary up to the real contraction; linear steps are not
    assert np.all(np.abs(np.linalg.det(a.ordered_exp)) <= 1 + 1e-12)


# ---------------------------------------------------------------- estimators

def test_insufficient_samples():
    c = np.zeros(1000)
    c[:5] = 1.0
    with pytest.raises(InsufficientSamples):
        rd.kde_estimate(c, 0)
    r = rd.kde_estimate(np.ones(200), 0)
    assert r.value == 1.0 and r.stderr == 0.0 and r.n_effective == 200


def test_z_score_complex_and_dict():
    a = rd.EstimatorResult(np.array([1 + 1j]), np.array([0.1 + 0.1j]), 100, 0.0, 0)
    b = rd.EstimatorResult(np.array([1 + 0.5j]), np.array([0.0 + 0.0j]), 100, 0.0, 0)
    assert rd.z_score(a, b) == pytest.approx(5.0)
    assert a.as_dict()["value"] == {"re": [1.0], "im": [1.0]}


def test_quaternion_girsanov_martingale():
    ens = sde.simulate(QUAT, SC, "reduced", Q0, 0.1, 1e-2, 4000, 11)
    w = np.exp(ens.log_girsanov)
    assert abs(w.mean() - 1.0) < 4 * w.std() / np.sqrt(len(w))


def test_momentum_relation_needs_surface_start():
    with pytest.raises(ConfigError):
        rd.greens_relation_momentum(ROTOR, SC, rd.so2_charge(1), [0.8, 0.6, 0.5, 0.0], [1.0, 0, 0.5, 0],
                                    0.1, 1e-2, 100)
