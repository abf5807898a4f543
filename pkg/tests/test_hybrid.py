import numpy as np
import pytest
from numpy import testing as npt
from scipy.integrate import trapezoid

from app.services.generalized import GeneralizedBelief, Precision
from app.services.hybrid import (
    HybridUnit,
    ReducedModel,
    default_posterior_precision,
    normalize_simplex,
)
from app.services.intention import BlockTarget, EntityFactorization, Intention
from app.services.unit import ContinuousUnit, DynamicsMap, LikelihoodMap, ObservationChannel
from app.utils.exceptions import ContractViolationError, DegenerateReductionError


def scalar_unit(posterior: float, prior: float, reduced: float) -> HybridUnit:
    model = ReducedModel(Intention("m", [[1.0]], [0.0]), Precision.scalar(reduced, 1))
    return HybridUnit(
        "scalar", [model], Precision.scalar(prior, 1), posterior_precision=Precision.scalar(posterior, 1)
    )


def quadrature_reduction(mu, posterior, eta, prior, f, reduced):
    """Mean, precision and log evidence of ``q(x) p_m(x) / p(x)`` on a grid."""
    precision = posterior + reduced - prior
    centre = (posterior * mu + reduced * f - prior * eta) / precision
    width = 12.0 / np.sqrt(min(precision, posterior))
    x = np.linspace(centre - width, centre + width, 40001)

    def log_normal(value, mean, pi):
        return 0.5 * np.log(pi / (2 * np.pi)) - 0.5 * pi * (value - mean) ** 2

    log_w = log_normal(x, mu, posterior) + log_normal(x, f, reduced) - log_normal(x, eta, prior)
    peak = log_w.max()
    w = np.exp(log_w - peak)
    mass = trapezoid(w, x)
    mean = trapezoid(x * w, x) / mass
    var = trapezoid((x - mean) ** 2 * w, x) / mass
    return mean, 1.0 / var, peak + np.log(mass)


def test_reduced_posterior_matches_quadrature(rng):
    checked = 0
    while checked < 50:
        posterior, prior, reduced = rng.uniform(0.5, 4.0, 3)
        if posterior + reduced - prior < 0.2:
            continue
        mu, eta, f = rng.uniform(-1.0, 1.0, 3)
        unit = scalar_unit(posterior, prior, reduced)
        mean, precision = unit.reduced_posterior(0, [mu], [eta], [f])
        q_mean, q_precision, _ = quadrature_reduction(mu, posterior, eta, prior, f, reduced)
        npt.assert_allclose(mean, [q_mean], atol=1e-6)
        npt.assert_allclose(precision.matrix, [[q_precision]], rtol=1e-6)
        checked += 1


def test_log_evidence_matches_quadrature_for_equal_precisions(rng):
    for _ in range(50):
        posterior, prior = rng.uniform(0.5, 4.0, 2)
        mu, eta, f = rng.uniform(-1.0, 1.0, 3)
        unit = scalar_unit(posterior, prior, prior)
        evidence = unit.log_evidence([mu], [eta], [np.array([f])])
        _, _, q_evidence = quadrature_reduction(mu, posterior, eta, prior, f, prior)
        npt.assert_allclose(evidence, [q_evidence], atol=1e-6)


def test_vacuous_reduction_has_zero_evidence(rng):
    for _ in range(20):
        posterior, prior = rng.uniform(0.5, 4.0, 2)
        mu, eta = rng.uniform(-1.0, 1.0, 2)
        unit = scalar_unit(posterior, prior, prior)
        mean, precision = unit.reduced_posterior(0, [mu], [eta], [eta])
        npt.assert_allclose(mean, [mu], atol=1e-12)
        npt.assert_allclose(precision.matrix, [[posterior]])
        assert abs(unit.log_evidence([mu], [eta], [np.array([eta])])[0]) < 1e-12
        unit.accumulate_evidence([mu], [eta], [np.array([eta])], 0.01)
        assert abs(unit.evidence[0]) < 1e-12


def test_scalar_worked_case():
    unit = scalar_unit(posterior=2.0, prior=1.0, reduced=1.0)
    mean, precision = unit.reduced_posterior(0, [1.0], [1.0], [1.0])
    npt.assert_allclose(mean, [1.0])
    npt.assert_allclose(precision.matrix, [[2.0]])
    assert unit.log_evidence([1.0], [1.0], [np.array([1.0])])[0] == pytest.approx(0.0, abs=1e-12)


def test_degenerate_reduction():
    unit = scalar_unit(posterior=1.0, prior=3.0, reduced=1.0)
    with pytest.raises(DegenerateReductionError):
        unit.reduced_posterior(0, [0.0], [0.0], [0.0])


def two_intention_unit() -> HybridUnit:
    factors = EntityFactorization(("self", "target"), 2)
    reach = Intention.from_targets("reach", factors, [BlockTarget("self", (0, 1), {"target": 1.0})])
    return HybridUnit(
        "hand",
        [ReducedModel(Intention.stay(4)), ReducedModel(reach)],
        Precision.scalar(1.0, 4),
        window=30,
    )


def test_bma_prior():
    unit = two_intention_unit()
    x = np.array([0.0, 0.0, 1.0, 2.0])
    unit.install_causes([0.0, 1.0])
    npt.assert_array_equal(unit.bma_prior(x), [1.0, 2.0, 0.0, 0.0])
    unit.install_causes([0.5, 0.5])
    npt.assert_array_equal(unit.bma_prior(np.array([1.0, 2.0, 1.0, 2.0])), np.zeros(4))


def test_evidence_favours_the_followed_intention(rng):
    unit = two_intention_unit()
    x = rng.standard_normal(4)
    for _ in range(unit.window):
        trajectories = [model.trajectory(x) for model in unit.reduced]
        eta_prime = unit.bma_prior(x)
        unit.accumulate_evidence(trajectories[1], eta_prime, trajectories, 0.01)
    assert unit.window_elapsed
    assert unit.evidence[1] > unit.evidence[0]
    causes = unit.bmc_update()
    assert causes[1] > 0.5
    assert causes.sum() == pytest.approx(1.0, abs=1e-12)
    npt.assert_array_equal(unit.evidence, np.zeros(2))
    assert unit.count == 0 and not unit.window_elapsed


def test_bmc_update_properties():
    unit = two_intention_unit()
    npt.assert_allclose(unit.bmc_update(), [0.5, 0.5])

    unit.evidence = np.array([0.3, 1.1])
    shifted = np.array([10.3, 11.1])
    first = unit.bmc_update()
    unit.install_causes([0.5, 0.5])
    unit.evidence = shifted
    npt.assert_allclose(unit.bmc_update(), first, atol=1e-12)

    unit.install_causes([1.0, 0.0])
    unit.evidence = np.array([0.0, 5.0])
    assert unit.bmc_update()[0] > 1.0 - 1e-6


def test_causes_must_be_probabilities():
    with pytest.raises(ContractViolationError):
        normalize_simplex([0.6, 0.6])
    unit = two_intention_unit()
    with pytest.raises(ContractViolationError):
        unit.install_causes([0.2, 0.2])
    with pytest.raises(ContractViolationError):
        HybridUnit("bad", [], Precision.scalar(1.0, 2))


def test_default_posterior_precision_adds_velocity_channels():
    jac = np.array([[1.0, 0.0]])
    total = default_posterior_precision(Precision.scalar(1.0, 2), [(jac, Precision.scalar(4.0, 1))])
    npt.assert_array_equal(total.matrix, [[5.0, 0.0], [0.0, 1.0]])


def test_standalone_step_accumulates_over_window():
    intentions = [Intention.stay(1), Intention("reach", [[0.0]], [1.0])]
    holder = {}
    base = ContinuousUnit(
        "base",
        GeneralizedBelief([0.0], [1.0]),
        DynamicsMap.from_intentions(intentions, lambda: holder["unit"].causes),
        Precision.scalar(1.0, 1),
        [ObservationChannel("pos", LikelihoodMap.identity(1), Precision.scalar(1.0, 1))],
    )
    unit = HybridUnit(
        "standalone", [ReducedModel(i) for i in intentions], Precision.scalar(1.0, 1), window=10, base=base
    )
    holder["unit"] = unit
    position = 0.0
    for _ in range(10):
        unit.step({"pos": np.array([position])}, 0.01)
        position += 0.01
    assert unit.window_elapsed
    causes = unit.bmc_update()
    assert causes[1] > causes[0]
