"""Hybrid units: categorical causes over continuous intention trajectories.

Top-down, the causes average the intention trajectories into one prior.
Bottom-up, every intention is scored as a reduced model of the full prior by
Bayesian model reduction; its log evidence accumulates over a window of
continuous ticks and a softmax over ``ln H + l`` gives the new causes.
"""

from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import softmax

from app.services.generalized import Precision, as_vector, safe_log
from app.services.intention import Intention, attractor_error, mix_trajectories
from app.services.unit import ContinuousUnit, StepReport
from app.utils.exceptions import ContractViolationError, DegenerateReductionError
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)

SIMPLEX_TOLERANCE = 1e-9


def normalize_simplex(values, name: str = "distribution") -> np.ndarray:
    vec = as_vector(values, name)
    if np.any(vec < -SIMPLEX_TOLERANCE) or abs(vec.sum() - 1.0) > SIMPLEX_TOLERANCE:
        raise ContractViolationError(f"{name} is not a probability vector: {vec.tolist()}")
    vec = np.clip(vec, 0.0, None)
    return vec / vec.sum()


@dataclass(frozen=True)
class ReducedModel:
    """One intention seen as a reduced prior ``N(f_m(x), Pi_m)``."""

    intention: Intention
    prior_precision: Optional[Precision] = None

    @property
    def name(self) -> str:
        return self.intention.name

    def trajectory(self, x) -> np.ndarray:
        return attractor_error(self.intention, x)


def default_posterior_precision(
    prior_precision: Precision, observed: Sequence[Tuple[np.ndarray, Precision]] = ()
) -> Precision:
    """
    Posterior precision of the first order at initialization.

    Args:
        prior_precision: Dynamics precision ``Pi_x``
        observed: ``(dg/dmu', Pi_o)`` of every channel observing the first order

    Returns:
        Precision: ``Pi_x + sum J^T Pi_o J``
    """
    total = prior_precision.matrix.copy()
    for jac, precision in observed:
        jac = np.atleast_2d(jac)
        total = total + jac.T @ precision.matrix @ jac
    return Precision(total)


class HybridUnit:
    """
    Categorical causes ``v`` selecting among reduced intention models.

    The unit owns its evidence accumulator; ``window_elapsed`` signals the
    barrier at which ``bmc_update`` or a discrete planner sets new causes.
    """

    def __init__(
        self,
        name: str,
        reduced: Sequence[ReducedModel],
        prior_precision: Precision,
        posterior_precision: Optional[Precision] = None,
        causes=None,
        prior_causes=None,
        window: int = 30,
        base: Optional[ContinuousUnit] = None,
    ):
        if not reduced:
            raise ContractViolationError(f"hybrid unit '{name}' needs at least one intention")
        if window < 1:
            raise ContractViolationError(f"hybrid unit '{name}': window must be positive")
        self.name = name
        self.reduced: List[ReducedModel] = list(reduced)
        self.prior_precision = prior_precision
        self.posterior_precision = posterior_precision or prior_precision
        m = len(self.reduced)
        self.prior_causes = (
            np.full(m, 1.0 / m) if prior_causes is None else normalize_simplex(prior_causes, "H_v")
        )
        self.causes = self.prior_causes.copy() if causes is None else normalize_simplex(causes, "v")
        self.window = int(window)
        self.evidence = np.zeros(m)
        self.last_evidence = np.zeros(m)
        self.count = 0
        self.base = base
        self._validate()

    def _validate(self) -> None:
        n = self.prior_precision.dim
        if self.posterior_precision.dim != n:
            raise ContractViolationError(f"hybrid unit '{self.name}': P_x and Pi_x differ in size")
        for model in self.reduced:
            if model.intention.dim != n:
                raise ContractViolationError(
                    f"hybrid unit '{self.name}': intention '{model.name}' has dimension "
                    f"{model.intention.dim}, state has {n}"
                )
            if model.prior_precision is not None and model.prior_precision.dim != n:
                raise ContractViolationError(
                    f"hybrid unit '{self.name}': reduced precision of '{model.name}' has wrong size"
                )
        if self.causes.size != len(self.reduced):
            raise ContractViolationError(
                f"hybrid unit '{self.name}': {self.causes.size} causes for {len(self.reduced)} intentions"
            )

    @property
    def intentions(self) -> List[Intention]:
        return [model.intention for model in self.reduced]

    @property
    def window_elapsed(self) -> bool:
        return self.count >= self.window

    def _reduced_precision(self, m: int) -> Precision:
        return self.reduced[m].prior_precision or self.prior_precision

    def bma_prior(self, x) -> np.ndarray:
        """``eta' = sum_m v_m f_m(x)``."""
        return mix_trajectories(self.causes, [model.trajectory(x) for model in self.reduced])

    def reduced_posterior(
        self, m: int, mu_prime, eta_prime, trajectory
    ) -> Tuple[np.ndarray, Precision]:
        """
        Laplace posterior of reduced model ``m``.

        Args:
            m: Intention index
            mu_prime: Full-model posterior mean of the first order
            eta_prime: Full-model prior mean (the model average)
            trajectory: ``f_m(x)``

        Returns:
            Tuple of the reduced mean and its precision ``P_x + Pi_m - Pi_x``

        Raises:
            DegenerateReductionError: If the reduced precision is not positive definite
        """
        pi_x = self.prior_precision.matrix
        pi_m = self._reduced_precision(m).matrix
        p_x = self.posterior_precision.matrix
        p_m = p_x + pi_m - pi_x
        try:
            factor = cho_factor(p_m)
        except LinAlgError as e:
            logger.error(f"Hybrid {self.name}: reduction '{self.reduced[m].name}' is degenerate")
            raise DegenerateReductionError(self.reduced[m].name, original_error=e) from e
        rhs = p_x @ as_vector(mu_prime) + pi_m @ as_vector(trajectory) - pi_x @ as_vector(eta_prime)
        return cho_solve(factor, rhs), Precision(p_m)

    def log_evidence(self, mu_prime, eta_prime, trajectories: Sequence[np.ndarray]) -> np.ndarray:
        """Instantaneous evidence ``L_m`` of every reduced model."""
        mu_prime = as_vector(mu_prime, "mu_prime")
        eta_prime = as_vector(eta_prime, "eta_prime")
        p_x = self.posterior_precision.matrix
        pi_x = self.prior_precision.matrix
        base = -mu_prime @ p_x @ mu_prime + eta_prime @ pi_x @ eta_prime
        out = np.zeros(len(self.reduced))
        for m, trajectory in enumerate(trajectories):
            mean, precision = self.reduced_posterior(m, mu_prime, eta_prime, trajectory)
            f = as_vector(trajectory)
            pi_m = self._reduced_precision(m).matrix
            out[m] = 0.5 * (mean @ precision.matrix @ mean - f @ pi_m @ f + base)
        return out

    def accumulate_evidence(
        self, mu_prime, eta_prime, trajectories: Sequence[np.ndarray], dt: float
    ) -> np.ndarray:
        if len(trajectories) != len(self.reduced):
            raise ContractViolationError(
                f"hybrid unit '{self.name}': {len(trajectories)} trajectories for "
                f"{len(self.reduced)} intentions"
            )
        self.evidence = self.evidence + dt * self.log_evidence(mu_prime, eta_prime, trajectories)
        self.count += 1
        return self.evidence

    def posterior_causes(self) -> np.ndarray:
        return softmax(safe_log(self.prior_causes) + self.evidence)

    def take_evidence(self) -> np.ndarray:
        """Close the window: return the accumulated evidence and reset it."""
        evidence = self.evidence.copy()
        self.last_evidence = evidence
        self.evidence = np.zeros_like(evidence)
        self.count = 0
        return evidence

    def bmc_update(self) -> np.ndarray:
        """``v = softmax(ln H + l)``; resets the accumulator."""
        self.causes = self.posterior_causes()
        self.take_evidence()
        logger.debug(f"Hybrid {self.name}: causes {np.round(self.causes, 4).tolist()}")
        return self.causes

    def install_causes(self, causes, prior=None) -> None:
        """Top-down causes from a discrete model; they also become the prior."""
        self.causes = normalize_simplex(causes, f"{self.name} causes")
        self.prior_causes = self.causes.copy() if prior is None else normalize_simplex(prior, "H_v")

    def step(self, observations: Mapping[str, np.ndarray], dt: float) -> StepReport:
        """
        Tick a standalone hybrid unit built over a continuous base unit.

        The base dynamics must read ``self.causes``; evidence is taken from the
        pre-tick belief.
        """
        if self.base is None:
            raise ContractViolationError(f"hybrid unit '{self.name}' has no base unit to step")
        belief = self.base.belief.copy()
        trajectories = [model.trajectory(belief.mu) for model in self.reduced]
        eta_prime = mix_trajectories(self.causes, trajectories)
        _, report = self.base.step(observations, dt)
        self.accumulate_evidence(belief.mu_prime, eta_prime, trajectories, dt)
        return report


def evidence_from(unit: HybridUnit, snapshot, dt: float) -> np.ndarray:
    """Accumulate evidence from a network level snapshot."""
    return unit.accumulate_evidence(snapshot.mu_prime, snapshot.eta_prime, snapshot.trajectories, dt)
