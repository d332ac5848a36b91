import numpy as np
import pytest

from crsn import schedulers
from crsn.errors import InvalidInputError, InvalidRateError
from crsn.schedulers import TriggerParam
from crsn.sysmodel import path_rng


def test_trigger_param_validation():
    with pytest.raises(InvalidInputError):
        TriggerParam(matrix=np.array([[0.0]]), mode="open")
    with pytest.raises(InvalidInputError):
        TriggerParam(matrix=np.eye(2), mode="sideways")


def test_open_zero_measurement_never_fires():
    y_param = TriggerParam(matrix=np.eye(2), mode="open")
    rng = path_rng(0)
    for _ in range(500):
        assert schedulers.trigger_open(np.zeros(2), y_param, rng).epsilon == 0


def test_open_trigger_probability():
    # scalar Y=1, y=2: P(fire) = 1 - exp(-2)
    y_param = TriggerParam(matrix=np.array([[1.0]]), mode="open")
    rng = path_rng(1)
    n = 100_000
    fires = sum(schedulers.trigger_open([2.0], y_param, rng).epsilon for _ in range(n))
    assert fires / n == pytest.approx(1 - np.exp(-2.0), abs=0.005)


def test_open_trigger_monotone_in_scale():
    rng_y = path_rng(2)
    for _ in range(50):
        y = rng_y.normal(size=2)
        small = np.exp(-0.5 * y @ np.eye(2) @ y)
        large = np.exp(-0.5 * y @ (10 * np.eye(2)) @ y)
        assert large <= small  # keep-probability drops, so firing is more likely


def test_open_trigger_sign_invariance():
    y_param = TriggerParam(matrix=np.array([[2.0]]), mode="open")
    rng = path_rng(3)
    y = 1.3
    p_plus = [schedulers.trigger_open([y], y_param, path_rng(3, i)).epsilon for i in range(2000)]
    p_minus = [schedulers.trigger_open([-y], y_param, path_rng(3, i)).epsilon for i in range(2000)]
    assert p_plus == p_minus  # same quadratic, same uniforms
    del rng


def test_closed_trigger_zero_innovation():
    z_param = TriggerParam(matrix=np.eye(1), mode="closed")
    rng = path_rng(4)
    for _ in range(200):
        assert schedulers.trigger_closed([0.0], z_param, rng).epsilon == 0


def test_closed_trigger_probability():
    z_param = TriggerParam(matrix=np.array([[1.0]]), mode="closed")
    rng = path_rng(5)
    n = 100_000
    fires = sum(schedulers.trigger_closed([2.0], z_param, rng).epsilon for _ in range(n))
    assert fires / n == pytest.approx(1 - np.exp(-2.0), abs=0.005)


def test_mode_mismatch_rejected():
    y_param = TriggerParam(matrix=np.eye(1), mode="open")
    with pytest.raises(InvalidInputError):
        schedulers.trigger_closed([1.0], y_param, path_rng(6))


def test_random_offline_limits():
    rng = path_rng(7)
    assert all(schedulers.trigger_random_offline(0.8, 0.8, rng).epsilon == 1 for _ in range(200))
    assert all(schedulers.trigger_random_offline(0.0, 0.8, rng).epsilon == 0 for _ in range(200))


def test_random_offline_rate():
    rng = path_rng(8)
    n = 100_000
    fires = sum(schedulers.trigger_random_offline(0.4, 0.8, rng).epsilon for _ in range(n))
    assert fires / n == pytest.approx(0.5, abs=0.005)


def test_random_offline_invalid_rate():
    with pytest.raises(InvalidRateError):
        schedulers.trigger_random_offline(0.9, 0.8, path_rng(9))


def test_periodic_half_rate():
    eps = [schedulers.trigger_periodic_offline(k, 0.4, 0.8).epsilon for k in range(8)]
    assert eps == [0, 1, 0, 1, 0, 1, 0, 1]


def test_periodic_third_rate_counting():
    # rate/lambda = 1/3: any window of N steps holds floor(N/3) +- 1 fires
    eps = [schedulers.trigger_periodic_offline(k, 0.8 / 3, 0.8).epsilon for k in range(300)]
    for start in range(0, 250, 7):
        for width in (9, 30, 50):
            count = sum(eps[start : start + width])
            assert abs(count - width / 3) <= 1


def test_periodic_full_rate():
    eps = [schedulers.trigger_periodic_offline(k, 0.8, 0.8).epsilon for k in range(20)]
    assert eps == [1] * 20


def test_periodic_phase_shift():
    base = [schedulers.trigger_periodic_offline(k, 0.4, 0.8).epsilon for k in range(10)]
    shifted = [schedulers.trigger_periodic_offline(k, 0.4, 0.8, phase=1).epsilon for k in range(10)]
    assert shifted == base[1:] + [schedulers.trigger_periodic_offline(10, 0.4, 0.8).epsilon]


def test_decisions_reproducible():
    y_param = TriggerParam(matrix=np.array([[1.5]]), mode="open")
    a = [schedulers.trigger_open([0.9], y_param, path_rng(10, i)).epsilon for i in range(300)]
    b = [schedulers.trigger_open([0.9], y_param, path_rng(10, i)).epsilon for i in range(300)]
    assert a == b
