import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy import testing as npt

from app.services.intention import (
    BlockTarget,
    EntityFactorization,
    Intention,
    attractor_error,
    intention_state,
    mix_jacobians,
    mix_trajectories,
)
from app.utils.exceptions import ConfigurationError, ContractViolationError

FACTORS = EntityFactorization(("self", "cup", "goal"), 3)


def test_factorization_blocks():
    assert FACTORS.body == "self"
    assert FACTORS.dim == 9
    assert FACTORS.block("cup") == slice(3, 6)
    x = np.arange(9.0)
    blocks = FACTORS.split(x)
    npt.assert_array_equal(blocks["goal"], [6.0, 7.0, 8.0])
    npt.assert_array_equal(FACTORS.concat(blocks), x)
    with pytest.raises(ConfigurationError):
        FACTORS.index("ball")
    with pytest.raises(ContractViolationError):
        EntityFactorization(("a", "a"), 2)


def test_reach_intention_copies_entity_position():
    reach = Intention.from_targets("reach_cup", FACTORS, [BlockTarget("self", (0, 1), {"cup": 1.0})])
    x = np.array([0.0, 0.0, 0.3, 1.0, 2.0, 0.9, -1.0, 5.0, 0.0])
    desired = intention_state(reach, x)
    npt.assert_array_equal(desired[:3], [1.0, 2.0, 0.3])
    npt.assert_array_equal(desired[3:], x[3:])
    npt.assert_array_equal(attractor_error(reach, x)[:2], [1.0, 2.0])


def test_bias_and_gain():
    upright = Intention.from_targets(
        "upright", FACTORS, [BlockTarget("self", (2,), {}, bias=(np.pi / 2,))], gain=0.5
    )
    x = np.zeros(9)
    npt.assert_allclose(attractor_error(upright, x)[2], 0.5 * np.pi / 2)
    with pytest.raises(ContractViolationError):
        Intention.from_targets("bad", FACTORS, [BlockTarget("self", (5,), {})])


def test_stay_has_zero_attractor():
    x = np.random.default_rng(0).standard_normal(9)
    npt.assert_array_equal(attractor_error(Intention.stay(9), x), np.zeros(9))


def test_dimension_mismatch():
    with pytest.raises(ContractViolationError):
        intention_state(Intention.stay(3), np.zeros(4))
    with pytest.raises(ContractViolationError):
        mix_trajectories([0.5, 0.5], [np.zeros(2)])


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_mixing_matches_direct_sum(weights):
    rng = np.random.default_rng(7)
    intentions = [Intention(f"i{k}", rng.standard_normal((9, 9)), rng.standard_normal(9)) for k in range(3)]
    x = rng.standard_normal(9)
    errors = [attractor_error(i, x) for i in intentions]
    expected = sum(w * e for w, e in zip(weights, errors))
    npt.assert_allclose(mix_trajectories(weights, errors), expected, atol=1e-12)
    expected_jac = sum(w * (i.W - np.eye(9)) for w, i in zip(weights, intentions))
    npt.assert_allclose(mix_jacobians(weights, intentions), expected_jac, atol=1e-12)
