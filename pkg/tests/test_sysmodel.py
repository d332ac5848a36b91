import json

import numpy as np
import pytest

from crsn import matcore, sysmodel
from crsn.errors import ConfigError, InvalidInputError, UnstablePlantError
from crsn.sysmodel import ChannelModel, LtiSystem, SimState

from conftest import random_stable_system


def test_steady_state_scalar_closed_form(scalar_sys):
    ss = sysmodel.steady_state(scalar_sys)
    assert ss.Sigma[0, 0] == pytest.approx(1.0 / (1 - 0.64), abs=1e-9)
    assert ss.Pi[0, 0] == pytest.approx(1.0 / (1 - 0.64) + 1.0, abs=1e-9)


def test_steady_state_memoryless_plant():
    sys = LtiSystem([[0.0]], [[2.0]], [[3.0]], [[1.0]])
    ss = sysmodel.steady_state(sys)
    assert ss.Sigma[0, 0] == pytest.approx(3.0)
    assert ss.Pi[0, 0] == pytest.approx(4.0 * 3.0 + 1.0)


def test_steady_state_lyapunov_residual(bounds_sys):
    ss = sysmodel.steady_state(bounds_sys)
    residual = ss.Sigma - bounds_sys.A @ ss.Sigma @ bounds_sys.A.T - bounds_sys.Q
    assert np.linalg.norm(residual, "fro") < 1e-9
    assert matcore.min_eigenvalue(ss.Sigma) > 0


def test_steady_state_matches_scipy():
    import scipy.linalg

    rng = np.random.default_rng(0)
    sys = random_stable_system(rng, n=3, m=2)
    ours = sysmodel.steady_state(sys).Sigma
    ref = scipy.linalg.solve_discrete_lyapunov(sys.A, sys.Q)
    assert np.allclose(ours, ref, atol=1e-9)


def test_steady_state_rejects_unstable():
    sys = LtiSystem([[1.2]], [[1.0]], [[1.0]], [[1.0]])
    with pytest.raises(UnstablePlantError):
        sysmodel.steady_state(sys)


def test_step_plant_noiseless():
    sys = LtiSystem(np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2) * 1e-300,
                    Pi0=np.eye(2))
    # R must be PD; use a vanishing but positive R and check exact propagation
    state = SimState(x=np.array([1.0, 2.0]))
    nxt, y = sysmodel.step_plant(state, sys, sysmodel.path_rng(0))
    assert np.allclose(nxt.x, [1.0, 2.0])
    assert np.allclose(y, [1.0, 2.0])
    assert nxt.step == 1


def test_step_plant_deterministic_with_seed(scalar_sys):
    def run():
        rng = sysmodel.path_rng(42)
        state = sysmodel.initial_state(scalar_sys, rng)
        xs = []
        for _ in range(50):
            state, y = sysmodel.step_plant(state, scalar_sys, rng)
            xs.append((state.x[0], y[0]))
        return xs

    assert run() == run()


def test_measurement_covariance_matches_pi(scalar_sys):
    rng = sysmodel.path_rng(7)
    ss = sysmodel.steady_state(scalar_sys)
    n_samples = 100_000
    # independent stationary draws: x ~ N(0, Sigma), y = Cx + v
    x = sysmodel.sample_gaussian(rng, sysmodel.covariance_factor(ss.Sigma), n_samples)
    v = sysmodel.sample_gaussian(rng, scalar_sys.r_factor(), n_samples)
    y = x @ scalar_sys.C.T + v
    assert np.var(y) == pytest.approx(ss.Pi[0, 0], rel=0.03)


def test_trajectory_stationarity(bounds_sys):
    ss = sysmodel.steady_state(bounds_sys)
    rng = sysmodel.path_rng(3)
    n_paths = 4000
    x = sysmodel.sample_gaussian(rng, sysmodel.covariance_factor(ss.Sigma), n_paths)
    lq = bounds_sys.q_factor()
    for _ in range(25):
        w = sysmodel.sample_gaussian(rng, lq, n_paths)
        x = x @ bounds_sys.A.T + w
    emp = np.cov(x.T)
    assert np.linalg.norm(emp - ss.Sigma, "fro") < 0.05 * np.linalg.norm(ss.Sigma, "fro") * 3


def test_channel_statistics():
    ch = ChannelModel(lam=0.8)
    rng = sysmodel.path_rng(11)
    draws = np.array([sysmodel.draw_channel(ch, rng) for _ in range(20_000)])
    assert draws.mean() == pytest.approx(0.8, abs=0.01)


def test_channel_degenerate():
    ch = ChannelModel(lam=1.0)
    rng = sysmodel.path_rng(12)
    assert all(sysmodel.draw_channel(ch, rng) == 1 for _ in range(1000))


def test_channel_reproducible():
    ch = ChannelModel(lam=0.5)
    a = [sysmodel.draw_channel(ch, sysmodel.path_rng(5, i)) for i in range(100)]
    b = [sysmodel.draw_channel(ch, sysmodel.path_rng(5, i)) for i in range(100)]
    assert a == b


def test_channel_validation():
    with pytest.raises(InvalidInputError):
        ChannelModel(lam=0.0)
    with pytest.raises(InvalidInputError):
        ChannelModel(lam=1.5)


def test_feasibility_check_stable(scalar_sys):
    for lam in (0.01, 0.5, 1.0):
        assert sysmodel.feasibility_check(scalar_sys, lam)


def test_feasibility_check_unstable():
    sys = LtiSystem([[2.0]], [[1.0]], [[1.0]], [[1.0]])
    assert not sysmodel.feasibility_check(sys, 0.5)
    assert sysmodel.feasibility_check(sys, 0.8)


def test_path_rngs_are_independent():
    # same root seed, different spawn keys: streams must differ
    a = sysmodel.path_rng(1, 0).random(8)
    b = sysmodel.path_rng(1, 1).random(8)
    assert not np.allclose(a, b)
    # and be reproducible
    assert np.array_equal(a, sysmodel.path_rng(1, 0).random(8))


def test_standard_normals_moments():
    rng = sysmodel.path_rng(9)
    z = sysmodel.standard_normals(rng, 200_000)
    assert abs(z.mean()) < 0.01
    assert z.std() == pytest.approx(1.0, abs=0.01)


def test_covariance_factor_singular():
    q = np.array([[1.0, 1.0], [1.0, 1.0]])  # rank 1
    l = sysmodel.covariance_factor(q)
    assert np.allclose(l @ l.T, q, atol=1e-10)


def test_json_roundtrip(tmp_path, design_sys):
    path = tmp_path / "plant.json"
    doc = design_sys.to_dict()
    doc["lambda"] = 0.8
    path.write_text(json.dumps(doc))
    loaded = LtiSystem.from_json(path)
    assert np.allclose(loaded.A, design_sys.A)
    assert np.allclose(loaded.C, design_sys.C)
    assert np.allclose(loaded.Q, design_sys.Q)
    assert np.allclose(loaded.R, design_sys.R)


def test_from_dict_missing_key():
    with pytest.raises(ConfigError):
        LtiSystem.from_dict({"A": [[1.0]]})


def test_validation_rejects_bad_r():
    with pytest.raises(InvalidInputError):
        LtiSystem([[0.5]], [[1.0]], [[1.0]], [[0.0]])


def test_validation_rejects_shape_mismatch():
    with pytest.raises(InvalidInputError):
        LtiSystem([[0.5]], [[1.0, 0.0]], [[1.0]], np.eye(2))
