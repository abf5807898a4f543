import itertools

import numpy as np
import pytest
from numpy import testing as npt

from app.services.discrete import (
    DiscreteModel,
    DiscretePlanner,
    ambiguity,
    enumerate_policies,
    expected_free_energy,
    infer_policies,
    infer_states,
    top_down_causes,
    variational_free_energy,
)
from app.utils.exceptions import ConfigurationError


def column_stochastic(rng, rows: int, cols: int) -> np.ndarray:
    matrix = rng.dirichlet(np.ones(rows), size=cols).T
    return matrix / matrix.sum(axis=0, keepdims=True)


def random_model(rng) -> DiscreteModel:
    n_states = int(rng.integers(2, 5))
    n_units = int(rng.integers(1, 3))
    n_actions = int(rng.integers(1, 3))
    horizon = int(rng.integers(1, 4))
    A = [column_stochastic(rng, int(rng.integers(2, 4)), n_states) for _ in range(n_units)]
    return DiscreteModel(
        A=A,
        B=[column_stochastic(rng, n_states, n_states) for _ in range(n_actions)],
        C=[rng.standard_normal(a.shape[0]) for a in A],
        D=rng.dirichlet(np.ones(n_states)),
        horizon=horizon,
    )


def enumerate_marginals(model, policy, observations, prior):
    """State marginals from the full joint over every state sequence."""
    T = len(policy) + 1
    marginals = np.zeros((T, model.n_states))
    for path in itertools.product(range(model.n_states), repeat=T):
        p = prior[path[0]]
        for t in range(1, T):
            p *= model.B[policy[t - 1]][path[t], path[t - 1]]
        for t, obs in enumerate(observations[:T]):
            if obs is None:
                continue
            for a, o in zip(model.A, obs):
                p *= np.exp(o @ np.log(a[:, path[t]]))
        for t, s in enumerate(path):
            marginals[t, s] += p
    return marginals / marginals.sum(axis=1, keepdims=True)


def brute_force_efe(model, policy, observation, prior):
    first = prior * np.exp(sum(o @ np.log(a) for a, o in zip(model.A, observation)))
    states = [first / first.sum()]
    for action in policy:
        states.append(model.B[action] @ states[-1])
    total = 0.0
    for t in range(1, len(states)):
        for u, a in enumerate(model.A):
            predicted = a @ states[t]
            total += predicted @ (np.log(predicted) - model.C[u])
            total += states[t] @ (-np.sum(a * np.log(a), axis=0))
    return total


def test_infer_states_matches_enumeration(rng):
    for _ in range(20):
        model = random_model(rng)
        policy = model.policies[int(rng.integers(len(model.policies)))]
        T = len(policy) + 1
        observations = [
            None if rng.random() < 0.3 else [rng.dirichlet(np.ones(a.shape[0])) for a in model.A]
            for _ in range(T)
        ]
        expected = enumerate_marginals(model, policy, observations, model.D)
        npt.assert_allclose(infer_states(model, policy, observations), expected, atol=1e-6)


def test_expected_free_energy_ranking_matches_brute_force(rng):
    for _ in range(20):
        model = random_model(rng)
        planner = DiscretePlanner(model)
        observation = [rng.dirichlet(np.ones(a.shape[0])) for a in model.A]
        beliefs = planner.evaluate(observation)
        expected = np.array([brute_force_efe(model, p, observation, model.D) for p in model.policies])
        npt.assert_allclose(beliefs.G, expected, rtol=1e-9, atol=1e-9)
        assert int(np.argmin(beliefs.G)) == int(np.argmin(expected))
        npt.assert_allclose(beliefs.G, beliefs.risk + beliefs.ambiguity, atol=1e-12)


def chain_model(C=None, A=None) -> DiscreteModel:
    stay = np.eye(2)
    move = np.array([[0.0, 0.0], [1.0, 1.0]])
    return DiscreteModel(
        A=[np.eye(2) if A is None else A],
        B=[stay, move],
        C=[np.zeros(2) if C is None else np.asarray(C, dtype=float)],
        D=[1.0, 0.0],
        horizon=2,
        state_labels=("start", "goal"),
        action_labels=("stay", "move"),
        unit_names=("hand",),
    )


def test_noiseless_chain_is_recovered():
    model = chain_model()
    observations = [[np.array([1.0, 0.0])], [np.array([0.0, 1.0])]]
    states = infer_states(model, (1,), observations)
    npt.assert_allclose(states, [[1.0, 0.0], [0.0, 1.0]], atol=1e-9)
    assert variational_free_energy(model, states, (1,), observations) == pytest.approx(0.0, abs=1e-8)


def test_uniform_likelihood_leaves_prior_dynamics():
    model = chain_model(A=np.full((2, 2), 0.5))
    states = infer_states(model, (1,), [[np.array([1.0, 0.0])], [np.array([1.0, 0.0])]])
    npt.assert_allclose(states, [[1.0, 0.0], [0.0, 1.0]], atol=1e-9)


def test_free_energy_by_hand():
    A = np.array([[0.9, 0.2], [0.1, 0.8]])
    model = chain_model(A=A)
    states = np.array([[0.7, 0.3], [0.4, 0.6]])
    obs = [[np.array([1.0, 0.0])], [np.array([0.0, 1.0])]]
    predicted = model.B[0] @ states[0]
    expected = (
        np.sum(states * np.log(states))
        - states[0] @ np.log(A[0])
        - states[1] @ np.log(A[1])
        - states[0] @ np.log(np.array([1.0, 1e-10]))
        - states[1] @ np.log(predicted)
    )
    assert variational_free_energy(model, states, (0,), obs) == pytest.approx(expected, rel=1e-12)


def test_preferred_policy_has_lower_expected_free_energy():
    model = chain_model(C=[0.0, 3.0])
    beliefs = DiscretePlanner(model).evaluate([np.array([1.0, 0.0])])
    assert model.policies == [(0,), (1,)]
    assert beliefs.G[1] < beliefs.G[0]
    assert beliefs.pi[1] > beliefs.pi[0]


def test_identity_likelihood_matching_preferences_has_zero_risk():
    model = chain_model(C=np.log([1e-10, 1.0]))
    states = np.array([[1.0, 0.0], [0.0, 1.0]])
    efe = expected_free_energy(model, states)
    assert efe.total == pytest.approx(0.0, abs=1e-8)
    npt.assert_array_equal(ambiguity(np.eye(2)), [0.0, 0.0])


def test_uniform_preferences_pick_the_unambiguous_state():
    # start, noisy, left, right; "peek" lands on the noisy state, "split"
    # on an even mix of two crisp states with the same outcome marginal.
    A = np.array([[1.0, 0.5, 1.0, 0.0], [0.0, 0.5, 0.0, 1.0]])
    peek = np.eye(4)
    peek[:, 0] = [0.0, 1.0, 0.0, 0.0]
    split = np.eye(4)
    split[:, 0] = [0.0, 0.0, 0.5, 0.5]
    model = DiscreteModel(A=[A], B=[peek, split], C=[np.zeros(2)], D=[1.0, 0.0, 0.0, 0.0], horizon=2)
    beliefs = DiscretePlanner(model).evaluate([np.array([1.0, 0.0])])
    npt.assert_allclose(beliefs.risk[0], beliefs.risk[1], atol=1e-12)
    npt.assert_allclose(beliefs.ambiguity, [np.log(2.0), 0.0], atol=1e-9)
    assert beliefs.G[1] < beliefs.G[0]


def test_infer_policies():
    npt.assert_allclose(infer_policies([2.0, 2.0, 2.0]), np.full(3, 1 / 3))
    npt.assert_allclose(infer_policies([0.0, np.log(3.0)]), [0.75, 0.25])
    npt.assert_allclose(infer_policies([1.0, 4.0]), infer_policies([11.0, 14.0]))
    npt.assert_allclose(infer_policies([0.0, 0.0], F=[0.0, np.log(3.0)]), [0.75, 0.25])


def test_top_down_causes():
    model = chain_model()
    npt.assert_allclose(top_down_causes(model, [0.0, 1.0], 0), [0.0, 1.0], atol=1e-9)
    A = np.array([[0.9, 0.2], [0.1, 0.8]])
    noisy = chain_model(A=A)
    npt.assert_allclose(top_down_causes(noisy, [0.5, 0.5], 0), A @ [0.5, 0.5])
    with_evidence = top_down_causes(noisy, [0.5, 0.5], 0, [0.0, 2.0])
    assert with_evidence[1] > 0.45


def test_enumerate_policies():
    assert enumerate_policies(2, 2) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert enumerate_policies(3, 0) == [()]


def test_simplex_violations_are_reported():
    with pytest.raises(ConfigurationError) as info:
        chain_model(A=np.array([[0.5, 1.0], [0.4, 0.0]]))
    assert info.value.error_type == "SimplexViolation"
    assert info.value.violations[0][0] == "discrete.A[0]"
    with pytest.raises(ConfigurationError):
        DiscreteModel(A=[np.eye(2)], B=[np.eye(2)], C=[np.zeros(2)], D=[0.5, 0.4], horizon=1)
    with pytest.raises(ConfigurationError):
        DiscreteModel(A=[np.eye(2)], B=[np.eye(3)], C=[np.zeros(2)], D=[0.5, 0.5], horizon=1)


def test_single_policy_planner_filters_like_an_hmm():
    model = DiscreteModel(
        A=[np.array([[0.8, 0.3], [0.2, 0.7]])],
        B=[np.array([[0.9, 0.2], [0.1, 0.8]])],
        C=[np.zeros(2)],
        D=[0.5, 0.5],
        horizon=2,
    )
    planner = DiscretePlanner(model)
    prior = model.D.copy()
    for l in ([2.0, 0.0], [0.0, 1.0], [0.0, 3.0]):
        planner.planner_step([np.array(l)])
        o = np.exp(l) / np.exp(l).sum()
        posterior = prior * np.exp(o @ np.log(model.A[0]))
        posterior /= posterior.sum()
        npt.assert_allclose(planner.log[-1].current, posterior, atol=1e-12)
        prior = model.B[0] @ posterior
    assert [record.tau for record in planner.log] == [0, 1, 2]


def test_planner_emits_causes_per_unit():
    model = chain_model(C=[0.0, 3.0])
    planner = DiscretePlanner(model, evidence_precision=[2.0], emit="next")
    causes = planner.planner_step([np.array([1.0, 0.0])], tick=30)
    assert len(causes) == 1
    assert causes[0].sum() == pytest.approx(1.0, abs=1e-12)
    record = planner.log[0]
    assert record.tick == 30 and set(record.causes) == {"hand"}
    assert record.action[1] > record.action[0]
    npt.assert_allclose(planner.prior, record.next)
    with pytest.raises(ConfigurationError):
        planner.planner_step([np.zeros(2), np.zeros(2)])
    with pytest.raises(ConfigurationError):
        DiscretePlanner(model, emit="later")
