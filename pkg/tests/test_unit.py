import numpy as np
import pytest
from numpy import testing as npt

from app.services.generalized import GeneralizedBelief, Precision
from app.services.intention import EntityFactorization, Intention, BlockTarget
from app.services.unit import (
    ContinuousUnit,
    DynamicsMap,
    GaussianPrior,
    LikelihoodMap,
    ObservationChannel,
)
from app.utils.exceptions import ContractViolationError, NumericAbortError
from tests.conftest import assert_jacobian_close, central_difference

TARGET = np.deg2rad(120.0)
START = np.deg2rad(-40.0)


def trig_likelihood() -> LikelihoodMap:
    return LikelihoodMap(
        predict=lambda x, v: np.array([np.sin(x[0]) * x[1], np.cos(x[1])]),
        jacobian_x=lambda x, v: np.array(
            [[np.cos(x[0]) * x[1], np.sin(x[0])], [0.0, -np.sin(x[1])]]
        ),
        name="trig",
    )


def random_unit(rng):
    channels = [
        ObservationChannel("trig", trig_likelihood(), Precision.diagonal([2.0, 0.5])),
        ObservationChannel("cause", LikelihoodMap.on_causes(2, 2), Precision.scalar(3.0, 2)),
        ObservationChannel("vel", LikelihoodMap.identity(2, [1]), Precision.scalar(1.5, 1), order=1),
    ]
    unit = ContinuousUnit(
        "u",
        GeneralizedBelief(rng.standard_normal(2), rng.standard_normal(2)),
        DynamicsMap.cause_attractor(2, 1.5),
        Precision.diagonal([1.0, 4.0]),
        channels,
        causes=rng.standard_normal(2),
        eta_x=GaussianPrior(rng.standard_normal(2), Precision.scalar(0.7, 2)),
        eta_v=GaussianPrior(np.zeros(2), Precision.scalar(0.3, 2)),
    )
    observations = {
        "trig": rng.standard_normal(2),
        "cause": rng.standard_normal(2),
        "vel": rng.standard_normal(1),
    }
    return unit, observations


def reaching_unit(action_gain: float = 1.0, proprio: float = 1.0) -> ContinuousUnit:
    return ContinuousUnit(
        "reach",
        GeneralizedBelief([START]),
        DynamicsMap.attractor([TARGET], gain=1.0),
        Precision.scalar(1.0, 1),
        [
            ObservationChannel(
                "proprio", LikelihoodMap.identity(1), Precision.scalar(proprio, 1), proprioceptive=True
            )
        ],
        action_gain=action_gain,
    )


def test_factory_jacobians_match_finite_differences(rng):
    factorization = EntityFactorization(("self", "target"), 2)
    reach = Intention.from_targets(
        "reach", factorization, [BlockTarget("self", (0, 1), {"target": 1.0})], gain=0.5
    )
    causes = np.array([0.3, 0.7])
    maps = [
        DynamicsMap.attractor(rng.standard_normal(4), gain=2.0),
        DynamicsMap.cause_attractor(4, gain=0.5),
        DynamicsMap.from_intentions([Intention.stay(4), reach], lambda: causes),
        LikelihoodMap.identity(4, [0, 2]),
    ]
    for _ in range(100):
        x, v = rng.standard_normal(4), rng.standard_normal(4)
        for mapping in maps:
            numeric = central_difference(lambda z: mapping.predict(z, v), x)
            assert_jacobian_close(mapping.jacobian_x(x, v), numeric)
        cause_map = DynamicsMap.cause_attractor(4, gain=0.5)
        numeric_v = central_difference(lambda z: cause_map.predict(x, z), v)
        assert_jacobian_close(cause_map.jacobian_v(x, v), numeric_v)

    trig = trig_likelihood()
    for _ in range(100):
        x = rng.standard_normal(2)
        assert_jacobian_close(trig.jacobian_x(x, None), central_difference(lambda z: trig.predict(z, None), x))


def test_compute_errors_matches_direct_recomputation(rng):
    for _ in range(20):
        unit, obs = random_unit(rng)
        errors = unit.compute_errors(obs)
        mu, mu_prime, v = unit.belief.mu, unit.belief.mu_prime, unit.causes
        npt.assert_allclose(
            errors.observations["trig"].value, obs["trig"] - [np.sin(mu[0]) * mu[1], np.cos(mu[1])]
        )
        npt.assert_allclose(errors.observations["cause"].value, obs["cause"] - v)
        npt.assert_allclose(errors.observations["vel"].value, obs["vel"] - mu_prime[1])
        npt.assert_allclose(errors.dynamics.value, mu_prime - 1.5 * (v - mu))
        npt.assert_allclose(errors.eta_x.value, mu - unit.eta_x.mean)
        npt.assert_allclose(errors.eta_v.value, v)
        assert errors.missing == []


def test_belief_updates_are_free_energy_gradients(rng):
    for _ in range(20):
        unit, obs = random_unit(rng)
        mu, mu_prime, v = unit.belief.mu.copy(), unit.belief.mu_prime.copy(), unit.causes.copy()

        def energy(mu_=mu, mu_prime_=mu_prime, v_=v):
            unit.belief = GeneralizedBelief(mu_, mu_prime_)
            unit.causes = v_
            value = unit.free_energy(obs)
            unit.belief = GeneralizedBelief(mu, mu_prime)
            unit.causes = v
            return value

        errors = unit.compute_errors(obs)
        dmu, dmu_prime = unit.update_hidden_states(errors)
        dv = unit.update_hidden_causes(errors)
        grad_mu = central_difference(lambda z: energy(mu_=z), mu)[0]
        grad_mu_prime = central_difference(lambda z: energy(mu_prime_=z), mu_prime)[0]
        grad_v = central_difference(lambda z: energy(v_=z), v)[0]
        npt.assert_allclose(dmu - mu_prime, -grad_mu, rtol=1e-6, atol=1e-7)
        npt.assert_allclose(dmu_prime, -grad_mu_prime, rtol=1e-6, atol=1e-7)
        npt.assert_allclose(dv, -grad_v, rtol=1e-6, atol=1e-7)


def test_fixed_point_has_zero_derivatives():
    unit = ContinuousUnit(
        "eq",
        GeneralizedBelief([TARGET]),
        DynamicsMap.attractor([TARGET]),
        Precision.scalar(1.0, 1),
        [ObservationChannel("p", LikelihoodMap.identity(1), Precision.scalar(1.0, 1), proprioceptive=True)],
        eta_x=GaussianPrior(np.array([TARGET]), Precision.scalar(1.0, 1)),
    )
    errors = unit.compute_errors({"p": np.array([TARGET])})
    assert all(err.norm() == 0.0 for err in errors.as_list())
    dmu, dmu_prime = unit.update_hidden_states(errors)
    npt.assert_array_equal(dmu, [0.0])
    npt.assert_array_equal(dmu_prime, [0.0])
    npt.assert_array_equal(unit.update_action(errors), [0.0])
    action, report = unit.step({"p": np.array([TARGET])}, 0.01)
    npt.assert_array_equal(unit.belief.mu, [TARGET])
    assert report.free_energy == 0.0


def test_reaching_setup_has_dynamics_error_only():
    unit = reaching_unit()
    errors = unit.compute_errors({"proprio": np.array([START])})
    npt.assert_allclose(errors.observations["proprio"].value, [0.0])
    npt.assert_allclose(errors.dynamics.value, [-(TARGET - START)])


def test_action_pushes_arm_toward_belief():
    unit = reaching_unit()
    unit.belief = GeneralizedBelief([0.5])
    errors = unit.compute_errors({"proprio": np.array([0.2])})
    assert unit.update_action(errors)[0] > 0.0


def test_closed_loop_reaching_converges():
    unit = reaching_unit()
    angle = np.array([START])
    dt = 0.01
    first = None
    for _ in range(5000):
        action, report = unit.step({"proprio": angle.copy()}, dt)
        first = report.free_energy if first is None else first
        angle = angle + dt * action
    assert abs(angle[0] - TARGET) < np.deg2rad(1.0)
    assert abs(unit.belief.mu[0] - TARGET) < np.deg2rad(1.0)
    assert unit.free_energy({"proprio": angle}) < 0.01 * first


def test_perception_only_settles_between_prior_and_observation():
    unit = reaching_unit()
    observation = {"proprio": np.array([START])}
    start = unit.free_energy(observation)
    for _ in range(20000):
        unit.step(observation, 1e-3)
    assert unit.free_energy(observation) < start
    assert START < unit.belief.mu[0] < TARGET


def test_attractor_only_converges_monotonically():
    unit = ContinuousUnit(
        "attractor", GeneralizedBelief([START]), DynamicsMap.attractor([TARGET]), Precision.scalar(1.0, 1)
    )
    gap = abs(unit.belief.mu[0] - TARGET)
    for _ in range(3000):
        unit.step({}, 0.01)
        new = abs(unit.belief.mu[0] - TARGET)
        assert new <= gap + 1e-12
        gap = new
    assert gap < 1e-3


def test_cause_belief_converges_to_observed_target():
    target = np.deg2rad(60.0)
    unit = ContinuousUnit(
        "track",
        GeneralizedBelief([0.0]),
        DynamicsMap.cause_attractor(1),
        Precision.scalar(1.0, 1),
        [ObservationChannel("vision", LikelihoodMap.on_causes(1, 1), Precision.scalar(1.0, 1))],
        causes=[0.0],
    )
    for _ in range(5000):
        unit.step({"vision": np.array([target])}, 0.01)
    npt.assert_allclose(unit.causes, [target], atol=1e-3)


def test_missing_channel_is_dropped_and_reported(rng):
    unit, obs = random_unit(rng)
    del obs["trig"]
    _, report = unit.step(obs, 0.01)
    assert report.missing == ["trig"]
    assert "obs:trig" not in report.error_norms


def test_report_norms_match_errors(rng):
    unit, obs = random_unit(rng)
    expected = unit.compute_errors(obs).norms()
    _, report = unit.step(obs, 0.01)
    assert report.error_norms == pytest.approx(expected)


def test_non_finite_belief_aborts():
    unit = reaching_unit()
    with pytest.raises(NumericAbortError) as info:
        unit.step({"proprio": np.array([np.nan])}, 0.01)
    assert info.value.module_path == "reach"


def test_channel_dimension_mismatch_rejected():
    with pytest.raises(ContractViolationError):
        ContinuousUnit(
            "bad",
            GeneralizedBelief([0.0, 0.0]),
            DynamicsMap.zero(2),
            Precision.scalar(1.0, 2),
            [ObservationChannel("p", LikelihoodMap.identity(2), Precision.scalar(1.0, 1))],
        )
