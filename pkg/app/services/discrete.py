"""Discrete planner over the causes of hybrid units.

States are categorical, outcomes are the hybrid units' causes (one
likelihood matrix per unit). Policies are action sequences scored by
expected free energy; the policy-averaged state predicts fresh causes for
every unit at each window boundary.
"""

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax, xlogy

from app.services.generalized import as_vector, safe_log
from app.utils.exceptions import ConfigurationError
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)

SIMPLEX_TOLERANCE = 1e-9

Observation = Optional[Sequence[np.ndarray]]


def _columns_on_simplex(matrix: np.ndarray, field_name: str) -> np.ndarray:
    if np.any(matrix < -SIMPLEX_TOLERANCE):
        raise ConfigurationError(
            f"{field_name} has negative entries",
            violations=[(field_name, None, "entries must be non-negative")],
            error_type="SimplexViolation",
        )
    sums = matrix.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums - 1.0) > SIMPLEX_TOLERANCE)
    if bad.size:
        raise ConfigurationError(
            f"{field_name} columns {bad.tolist()} do not sum to 1",
            violations=[
                (field_name, None, f"column {j} sums to {sums[j]:.6g}") for j in bad.tolist()
            ],
            error_type="SimplexViolation",
        )
    matrix = np.clip(matrix, 0.0, None)
    return matrix / matrix.sum(axis=0, keepdims=True)


def enumerate_policies(n_actions: int, length: int) -> List[Tuple[int, ...]]:
    """Every action sequence of ``length`` steps, in lexicographic order."""
    return list(itertools.product(range(n_actions), repeat=length))


@dataclass
class DiscreteModel:
    A: List[np.ndarray]
    B: List[np.ndarray]
    C: List[np.ndarray]
    D: np.ndarray
    horizon: int
    state_labels: Tuple[str, ...] = ()
    action_labels: Tuple[str, ...] = ()
    unit_names: Tuple[str, ...] = ()
    policies: List[Tuple[int, ...]] = field(default_factory=list)

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError(
                "planning horizon must be positive",
                violations=[("discrete.horizon", None, "must be >= 1")],
            )
        self.D = _columns_on_simplex(as_vector(self.D, "D")[:, None], "discrete.D")[:, 0]
        n = self.D.size
        self.B = [
            _columns_on_simplex(np.asarray(b, dtype=float), f"discrete.B[{k}]")
            for k, b in enumerate(self.B)
        ]
        self.A = [
            _columns_on_simplex(np.asarray(a, dtype=float), f"discrete.A[{u}]")
            for u, a in enumerate(self.A)
        ]
        for k, b in enumerate(self.B):
            if b.shape != (n, n):
                raise ConfigurationError(
                    f"B[{k}] has shape {b.shape}, expected {(n, n)}",
                    violations=[(f"discrete.B[{k}]", None, f"expected {n}x{n}")],
                )
        for u, a in enumerate(self.A):
            if a.shape[1] != n:
                raise ConfigurationError(
                    f"A[{u}] has {a.shape[1]} state columns, expected {n}",
                    violations=[(f"discrete.A[{u}]", None, f"expected {n} columns")],
                )
        if len(self.C) != len(self.A):
            raise ConfigurationError(
                "one preference vector per unit is required",
                violations=[("discrete.C", None, f"{len(self.C)} entries for {len(self.A)} units")],
            )
        self.C = [np.atleast_1d(np.asarray(c, dtype=float)) for c in self.C]
        for u, (a, c) in enumerate(zip(self.A, self.C)):
            if c.shape[-1] != a.shape[0]:
                raise ConfigurationError(
                    f"C[{u}] has {c.shape[-1]} outcomes, A[{u}] has {a.shape[0]}",
                    violations=[(f"discrete.C[{u}]", None, "outcome count mismatch")],
                )
        if not self.policies:
            self.policies = enumerate_policies(len(self.B), self.horizon - 1)
        for policy in self.policies:
            if len(policy) > self.horizon - 1 or any(not 0 <= a < len(self.B) for a in policy):
                raise ConfigurationError(
                    f"invalid policy {policy}",
                    violations=[("discrete.policies", None, f"invalid policy {list(policy)}")],
                )

    @property
    def n_states(self) -> int:
        return int(self.D.size)

    @property
    def n_actions(self) -> int:
        return len(self.B)

    def preference(self, unit: int, t: int) -> np.ndarray:
        c = self.C[unit]
        return c if c.ndim == 1 else c[min(t, c.shape[0] - 1)]


@dataclass
class ExpectedFreeEnergy:
    total: float
    risk: float
    ambiguity: float


@dataclass
class PolicyBeliefs:
    states: np.ndarray
    pi: np.ndarray
    G: np.ndarray
    F: np.ndarray
    risk: np.ndarray
    ambiguity: np.ndarray

    def marginal(self, t: int) -> np.ndarray:
        """State distribution at slot ``t`` averaged over policies."""
        return np.einsum("p,ps->s", self.pi, self.states[:, t, :])


def ambiguity(A: np.ndarray) -> np.ndarray:
    """Outcome entropy of every state column, ``-sum_o A ln A``."""
    return -np.sum(A * safe_log(A), axis=0)


def observation_loglik(model: DiscreteModel, observations: Sequence[Observation]) -> np.ndarray:
    """Per-slot log likelihood ``sum_u o_u . ln A_u[:, s]``; unobserved slots are 0."""
    lik = np.zeros((len(observations), model.n_states))
    for t, obs in enumerate(observations):
        if obs is None:
            continue
        for a, o in zip(model.A, obs):
            lik[t] += as_vector(o, "observed causes") @ safe_log(a)
    return lik


def _slots(policy: Sequence[int]) -> int:
    return len(policy) + 1


def infer_states(
    model: DiscreteModel,
    policy: Sequence[int],
    observations: Sequence[Observation],
    prior: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Exact state marginals of one policy by forward-backward.

    Args:
        model: Discrete generative model
        policy: Action per transition
        observations: Observed causes per slot; ``None`` or missing slots
            carry no likelihood term
        prior: Initial-state prior, ``D`` when omitted

    Returns:
        np.ndarray: ``(len(policy) + 1, n_states)`` marginals
    """
    T = _slots(policy)
    padded = list(observations)[:T] + [None] * max(0, T - len(observations))
    lik = observation_loglik(model, padded)
    weights = np.exp(lik - lik.max(axis=1, keepdims=True))
    start = model.D if prior is None else as_vector(prior, "prior")

    alpha = np.zeros((T, model.n_states))
    alpha[0] = start * weights[0]
    alpha[0] /= alpha[0].sum()
    for t in range(1, T):
        alpha[t] = (model.B[policy[t - 1]] @ alpha[t - 1]) * weights[t]
        alpha[t] /= alpha[t].sum()

    beta = np.ones((T, model.n_states))
    for t in range(T - 2, -1, -1):
        beta[t] = model.B[policy[t]].T @ (beta[t + 1] * weights[t + 1])
        beta[t] /= beta[t].sum()

    posterior = alpha * beta
    return posterior / posterior.sum(axis=1, keepdims=True)


def variational_free_energy(
    model: DiscreteModel,
    states: np.ndarray,
    policy: Sequence[int],
    observations: Sequence[Observation],
    prior: Optional[np.ndarray] = None,
) -> float:
    """``sum s ln s - sum s . ln A^T o - s_1 . ln D - sum s_t . ln(B s_{t-1})``."""
    T = states.shape[0]
    padded = list(observations)[:T] + [None] * max(0, T - len(observations))
    lik = observation_loglik(model, padded)
    start = model.D if prior is None else as_vector(prior, "prior")
    value = float(np.sum(xlogy(states, states)))
    value -= float(np.sum(states * lik))
    value -= float(states[0] @ safe_log(start))
    for t in range(1, T):
        value -= float(states[t] @ safe_log(model.B[policy[t - 1]] @ states[t - 1]))
    return value


def expected_free_energy(model: DiscreteModel, states: np.ndarray, start: int = 1) -> ExpectedFreeEnergy:
    """
    Risk plus ambiguity over the future slots of one policy.

    Args:
        model: Discrete generative model
        states: Policy state marginals per slot
        start: First future slot

    Returns:
        ExpectedFreeEnergy: Total with its two components
    """
    risk = 0.0
    amb = 0.0
    for t in range(start, states.shape[0]):
        for u, a in enumerate(model.A):
            predicted = a @ states[t]
            risk += float(predicted @ (safe_log(predicted) - model.preference(u, t)))
            amb += float(states[t] @ ambiguity(a))
    return ExpectedFreeEnergy(risk + amb, risk, amb)


def infer_policies(G, F=None) -> np.ndarray:
    """``softmax(-G)``, or ``softmax(-G - F)`` when free energies are given."""
    scores = -as_vector(G, "G")
    if F is not None:
        scores = scores - as_vector(F, "F")
    return softmax(scores)


def top_down_causes(model: DiscreteModel, marginal, unit: int, evidence=None) -> np.ndarray:
    """``v = softmax(ln A_u s + l)``."""
    a = model.A[unit]
    logits = safe_log(a @ as_vector(marginal, "state marginal"))
    if evidence is not None:
        logits = logits + as_vector(evidence, "evidence")
    return softmax(logits)


@dataclass
class PlannerRecord:
    tau: int
    tick: int
    current: np.ndarray
    next: np.ndarray
    action: np.ndarray
    pi: np.ndarray
    G: np.ndarray
    causes: Dict[str, np.ndarray]


class DiscretePlanner:
    """
    Window-boundary planner driving a set of hybrid units.

    Args:
        model: Discrete generative model
        evidence_precision: Scale applied to each unit's accumulated evidence
        emit: ``"current"`` to emit causes from the filtered present state,
            ``"next"`` to emit them from the one-step prediction
        use_free_energy: Include per-policy variational free energy in the
            policy posterior
    """

    def __init__(
        self,
        model: DiscreteModel,
        evidence_precision: Optional[Sequence[float]] = None,
        emit: str = "current",
        use_free_energy: bool = False,
    ):
        if emit not in ("current", "next"):
            raise ConfigurationError(
                f"unknown emission slot '{emit}'",
                violations=[("discrete.emit", None, "expected 'current' or 'next'")],
            )
        self.model = model
        n_units = len(model.A)
        self.evidence_precision = (
            np.ones(n_units) if evidence_precision is None else as_vector(evidence_precision)
        )
        if self.evidence_precision.size != n_units:
            raise ConfigurationError(
                "one evidence precision per unit is required",
                violations=[("discrete.evidence_precision", None, f"expected {n_units} values")],
            )
        self.emit = emit
        self.use_free_energy = use_free_energy
        self.prior = model.D.copy()
        self.tau = 0
        self.beliefs: Optional[PolicyBeliefs] = None
        self.log: List[PlannerRecord] = []

    def evaluate(self, observation: Sequence[np.ndarray]) -> PolicyBeliefs:
        model = self.model
        n_pol = len(model.policies)
        states = np.zeros((n_pol, model.horizon, model.n_states))
        G = np.zeros(n_pol)
        F = np.zeros(n_pol)
        risk = np.zeros(n_pol)
        amb = np.zeros(n_pol)
        for k, policy in enumerate(model.policies):
            s = infer_states(model, policy, [observation], prior=self.prior)
            slots = s.shape[0]
            states[k, :slots] = s
            # Shorter policies hold their last state.
            states[k, slots:] = s[-1]
            efe = expected_free_energy(model, s)
            G[k], risk[k], amb[k] = efe.total, efe.risk, efe.ambiguity
            F[k] = variational_free_energy(model, s, policy, [observation], prior=self.prior)
        pi = infer_policies(G, F if self.use_free_energy else None)
        return PolicyBeliefs(states, pi, G, F, risk, amb)

    def planner_step(self, evidence: Sequence[np.ndarray], tick: int = 0) -> List[np.ndarray]:
        """
        Integrate the units' window evidence and emit fresh cause priors.

        Args:
            evidence: Accumulated log evidence per unit, in model order
            tick: Continuous tick of the barrier, for the log

        Returns:
            List of cause vectors, one per unit
        """
        model = self.model
        if len(evidence) != len(model.A):
            raise ConfigurationError(
                f"planner expects evidence from {len(model.A)} units, got {len(evidence)}",
                violations=[("discrete.units", None, "unit count mismatch")],
            )
        scaled = [zeta * as_vector(l) for zeta, l in zip(self.evidence_precision, evidence)]
        observation = [softmax(l) for l in scaled]
        beliefs = self.evaluate(observation)
        current = beliefs.marginal(0)
        upcoming = beliefs.marginal(1) if model.horizon > 1 else current
        action = np.zeros(model.n_actions)
        for p, policy in zip(beliefs.pi, model.policies):
            if policy:
                action[policy[0]] += p

        emitted = current if self.emit == "current" else upcoming
        causes = [top_down_causes(model, emitted, u, l) for u, l in enumerate(scaled)]

        self.prior = upcoming
        self.beliefs = beliefs
        names = model.unit_names or tuple(str(u) for u in range(len(model.A)))
        self.log.append(
            PlannerRecord(
                tau=self.tau,
                tick=tick,
                current=current,
                next=upcoming,
                action=action,
                pi=beliefs.pi,
                G=beliefs.G,
                causes=dict(zip(names, causes)),
            )
        )
        logger.debug(
            f"Planner tau={self.tau} tick={tick}: state {np.round(current, 3).tolist()}, "
            f"action {np.round(action, 3).tolist()}"
        )
        self.tau += 1
        return causes
