import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy import testing as npt

from app.services.generalized import (
    GeneralizedBelief,
    Precision,
    PredictionError,
    euler_step,
    laplace_free_energy,
    safe_log,
    shift_operator,
    weighted_error,
)
from app.utils.exceptions import ContractViolationError, NumericAbortError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
significant = st.one_of(st.just(0.0), st.floats(1e-3, 1e3), st.floats(-1e3, -1e-3))


def test_weighted_error_examples():
    npt.assert_array_equal(weighted_error([0, 0], Precision.scalar(1, 2)), [0, 0])
    npt.assert_array_equal(weighted_error([2, -1], Precision.scalar(1, 2)), [2, -1])
    npt.assert_array_equal(weighted_error([1, 1], Precision.diagonal([2, 3])), [2, 3])


def test_weighted_error_dimension_mismatch():
    with pytest.raises(ContractViolationError):
        weighted_error([1, 2, 3], Precision.scalar(1, 2))


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), finite, finite)
def test_weighted_error_is_linear(e1, e2, a, b):
    pi = Precision.diagonal([0.5, 2.0, 7.0])
    lhs = weighted_error(a * e1 + b * e2, pi)
    rhs = a * weighted_error(e1, pi) + b * weighted_error(e2, pi)
    npt.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


def test_precision_rejects_asymmetric_and_negative():
    with pytest.raises(ContractViolationError):
        Precision.full([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ContractViolationError):
        Precision.diagonal([1.0, -1.0])
    assert Precision.diagonal([1.0, 0.0]).is_positive_definite() is False
    assert (Precision.scalar(1, 2) + Precision.scalar(2, 2)).matrix[1, 1] == 3.0


def test_laplace_free_energy_examples():
    assert laplace_free_energy([]) == 0.0
    assert laplace_free_energy([PredictionError([1.0], Precision.scalar(1, 1))]) == 0.5
    assert laplace_free_energy([PredictionError([0.0, 0.0], Precision.scalar(4, 2))]) == 0.0


@given(arrays(float, 4, elements=significant))
def test_free_energy_non_negative_and_zero_only_at_equilibrium(err):
    pi = Precision.diagonal([1.0, 2.0, 0.5, 3.0])
    value = laplace_free_energy([PredictionError(err, pi)])
    assert value >= 0.0
    assert (value == 0.0) == bool(np.all(err == 0.0))


def test_shift_operator():
    shifted = shift_operator(GeneralizedBelief([3.0], [5.0]))
    npt.assert_array_equal(shifted.mu, [5.0])
    npt.assert_array_equal(shifted.mu_prime, [0.0])
    twice = shift_operator(shift_operator(GeneralizedBelief([1.0, 2.0], [3.0, 4.0])))
    npt.assert_array_equal(twice.mu_prime, [0.0, 0.0])


def test_euler_step_examples():
    npt.assert_array_equal(euler_step([1.0], [0.0], 0.1), [1.0])
    npt.assert_array_equal(euler_step([0.0], [2.0], 0.5), [1.0])
    with pytest.raises(ContractViolationError):
        euler_step([0.0], [1.0], 0.0)


def test_euler_step_tracks_exponential_decay():
    dt = 1e-3
    x = np.array([1.0])
    for _ in range(1000):
        x = euler_step(x, -x, dt)
    # Global error of forward Euler on x' = -x is O(dt).
    assert abs(x[0] - np.exp(-1.0)) < dt


def test_gradient_descent_on_quadratic_is_monotone(rng):
    for _ in range(5):
        m = rng.standard_normal((4, 4))
        hessian = m @ m.T + 0.1 * np.eye(4)
        dt = 0.9 / np.linalg.eigvalsh(hessian).max()
        x = rng.standard_normal(4)
        energy = 0.5 * x @ hessian @ x
        for _ in range(100):
            x = euler_step(x, -hessian @ x, dt)
            new = 0.5 * x @ hessian @ x
            assert new <= energy
            energy = new


def test_belief_validation():
    with pytest.raises(ContractViolationError):
        GeneralizedBelief([1.0, 2.0], [1.0])
    belief = GeneralizedBelief([np.nan])
    assert not belief.is_finite()
    with pytest.raises(NumericAbortError) as info:
        belief.check_finite("mu", "arm/self")
    assert info.value.exit_code == 3


@settings(max_examples=50)
@given(st.floats(0.0, 1.0))
def test_safe_log_floor(p):
    assert safe_log(p) >= np.log(1e-10)
    npt.assert_allclose(safe_log(0.0), np.log(1e-10))
