"""Continuous predictive-coding unit: likelihood and dynamics maps, belief and action updates."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.services.generalized import (
    GeneralizedBelief,
    Precision,
    PredictionError,
    as_vector,
    euler_step,
    laplace_free_energy,
)
from app.services.intention import Intention, mix_jacobians, mix_trajectories
from app.utils.exceptions import ContractViolationError, NumericAbortError
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)

StateFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LikelihoodMap:
    """Observation model ``g(x, v)`` with its Jacobians."""

    predict: StateFn
    jacobian_x: StateFn
    jacobian_v: Optional[StateFn] = None
    name: str = "g"

    @classmethod
    def identity(
        cls, state_dim: int, components: Optional[Sequence[int]] = None
    ) -> "LikelihoodMap":
        comps = list(range(state_dim)) if components is None else list(components)
        select = np.eye(state_dim)[comps]
        return cls(
            predict=lambda x, v: select @ x,
            jacobian_x=lambda x, v: select,
            name="identity",
        )

    @classmethod
    def on_causes(
        cls, state_dim: int, cause_dim: int, components: Optional[Sequence[int]] = None
    ) -> "LikelihoodMap":
        comps = list(range(cause_dim)) if components is None else list(components)
        select = np.eye(cause_dim)[comps]
        zeros = np.zeros((len(comps), state_dim))
        return cls(
            predict=lambda x, v: select @ v,
            jacobian_x=lambda x, v: zeros,
            jacobian_v=lambda x, v: select,
            name="cause_identity",
        )


@dataclass(frozen=True)
class DynamicsMap:
    """First-order trajectory prediction ``f(x, v)`` with its Jacobians."""

    predict: StateFn
    jacobian_x: StateFn
    jacobian_v: Optional[StateFn] = None
    name: str = "f"

    @classmethod
    def zero(cls, state_dim: int) -> "DynamicsMap":
        return cls(
            predict=lambda x, v: np.zeros(state_dim),
            jacobian_x=lambda x, v: np.zeros((state_dim, state_dim)),
            name="zero",
        )

    @classmethod
    def attractor(cls, target, gain: float = 1.0) -> "DynamicsMap":
        """Static goal: ``f = gain * (target - x)``."""
        rho = as_vector(target, "attractor target")
        n = rho.size
        return cls(
            predict=lambda x, v: gain * (rho - x),
            jacobian_x=lambda x, v: -gain * np.eye(n),
            name="attractor",
        )

    @classmethod
    def cause_attractor(cls, state_dim: int, gain: float = 1.0) -> "DynamicsMap":
        """Goal carried by the hidden causes: ``f = gain * (v - x)``."""
        return cls(
            predict=lambda x, v: gain * (v - x),
            jacobian_x=lambda x, v: -gain * np.eye(state_dim),
            jacobian_v=lambda x, v: gain * np.eye(state_dim),
            name="cause_attractor",
        )

    @classmethod
    def from_intentions(
        cls, intentions: Sequence[Intention], causes: Callable[[], np.ndarray]
    ) -> "DynamicsMap":
        """Intention mixture weighted by causes read at call time."""

        def predict(x, v):
            x = as_vector(x)
            return mix_trajectories(
                causes(), [intention.W @ x + intention.b - x for intention in intentions]
            )

        return cls(
            predict=predict,
            jacobian_x=lambda x, v: mix_jacobians(causes(), intentions),
            name="intention_mixture",
        )


@dataclass(frozen=True)
class ObservationChannel:
    name: str
    likelihood: LikelihoodMap
    precision: Precision
    order: int = 0
    proprioceptive: bool = False
    actuated: Optional[Tuple[int, ...]] = None


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    precision: Precision


@dataclass
class UnitErrors:
    observations: Dict[str, PredictionError]
    dynamics: PredictionError
    eta_x: Optional[PredictionError] = None
    eta_v: Optional[PredictionError] = None
    missing: List[str] = field(default_factory=list)

    def as_list(self) -> List[PredictionError]:
        errors = list(self.observations.values()) + [self.dynamics]
        errors.extend(err for err in (self.eta_x, self.eta_v) if err is not None)
        return errors

    def norms(self) -> Dict[str, float]:
        norms = {f"obs:{name}": err.norm() for name, err in self.observations.items()}
        norms["dynamics"] = self.dynamics.norm()
        if self.eta_x is not None:
            norms["eta_x"] = self.eta_x.norm()
        if self.eta_v is not None:
            norms["eta_v"] = self.eta_v.norm()
        return norms


@dataclass
class StepReport:
    free_energy: float
    error_norms: Dict[str, float]
    missing: List[str]
    action: np.ndarray


class ContinuousUnit:
    """
    Continuous-time predictive-coding unit over hidden states and causes.

    Every tick computes errors from pre-tick beliefs and integrates beliefs
    and action together; nothing is read back mid-tick.
    """

    def __init__(
        self,
        name: str,
        belief: GeneralizedBelief,
        dynamics: DynamicsMap,
        dynamics_precision: Precision,
        channels: Sequence[ObservationChannel] = (),
        causes=None,
        eta_x: Optional[GaussianPrior] = None,
        eta_v: Optional[GaussianPrior] = None,
        action_gain: float = 1.0,
    ):
        self.name = name
        self.belief = belief
        self.dynamics = dynamics
        self.dynamics_precision = dynamics_precision
        self.channels = list(channels)
        self.causes = np.zeros(0) if causes is None else as_vector(causes, "causes").copy()
        self.eta_x = eta_x
        self.eta_v = eta_v
        self.action_gain = action_gain
        self._validate()

    def _validate(self) -> None:
        n = self.belief.dim
        if self.dynamics_precision.dim != n:
            raise ContractViolationError(
                f"unit '{self.name}': dynamics precision has dimension "
                f"{self.dynamics_precision.dim}, state has {n}"
            )
        names = [channel.name for channel in self.channels]
        if len(set(names)) != len(names):
            raise ContractViolationError(f"unit '{self.name}': duplicate channel names")
        for channel in self.channels:
            out = channel.likelihood.predict(self.belief.mu, self.causes)
            if np.size(out) != channel.precision.dim:
                raise ContractViolationError(
                    f"unit '{self.name}': channel '{channel.name}' predicts "
                    f"{np.size(out)} values, precision has {channel.precision.dim}"
                )
            if channel.order not in (0, 1):
                raise ContractViolationError(
                    f"unit '{self.name}': channel '{channel.name}' has order {channel.order}"
                )
        if self.eta_x is not None and self.eta_x.precision.dim != n:
            raise ContractViolationError(f"unit '{self.name}': state prior dimension mismatch")
        if self.eta_v is not None and self.eta_v.precision.dim != self.causes.size:
            raise ContractViolationError(f"unit '{self.name}': cause prior dimension mismatch")

    @property
    def action_dim(self) -> int:
        dims = [
            max(channel.actuated) + 1 if channel.actuated else channel.precision.dim
            for channel in self.channels
            if channel.proprioceptive
        ]
        return max(dims, default=0)

    def _source(self, channel: ObservationChannel) -> np.ndarray:
        return self.belief.mu_prime if channel.order == 1 else self.belief.mu

    def compute_errors(self, observations: Mapping[str, np.ndarray]) -> UnitErrors:
        """
        Prediction errors of every term from the current beliefs.

        Args:
            observations: Observation vector per channel name; absent channels
                are dropped from this tick and listed in ``missing``

        Returns:
            UnitErrors: Observation, prior and dynamics errors
        """
        mu, v = self.belief.mu, self.causes
        obs_errors: Dict[str, PredictionError] = {}
        missing: List[str] = []
        for channel in self.channels:
            value = observations.get(channel.name)
            if value is None:
                missing.append(channel.name)
                continue
            predicted = channel.likelihood.predict(self._source(channel), v)
            obs_errors[channel.name] = PredictionError(
                as_vector(value) - predicted, channel.precision, label=channel.name
            )

        eta_prime = self.dynamics.predict(mu, v)
        dynamics = PredictionError(
            self.belief.mu_prime - eta_prime, self.dynamics_precision, label="dynamics"
        )
        eta_x = (
            PredictionError(mu - self.eta_x.mean, self.eta_x.precision, label="eta_x")
            if self.eta_x is not None
            else None
        )
        eta_v = (
            PredictionError(v - self.eta_v.mean, self.eta_v.precision, label="eta_v")
            if self.eta_v is not None
            else None
        )
        return UnitErrors(obs_errors, dynamics, eta_x, eta_v, missing)

    def update_hidden_states(self, errors: UnitErrors) -> Tuple[np.ndarray, np.ndarray]:
        mu, v = self.belief.mu, self.causes
        dmu = self.belief.mu_prime.copy()
        dmu_prime = -errors.dynamics.weighted()
        if errors.eta_x is not None:
            dmu -= errors.eta_x.weighted()
        for channel in self.channels:
            error = errors.observations.get(channel.name)
            if error is None:
                continue
            jac = channel.likelihood.jacobian_x(self._source(channel), v)
            if channel.order == 1:
                dmu_prime += jac.T @ error.weighted()
            else:
                dmu += jac.T @ error.weighted()
        dmu += self.dynamics.jacobian_x(mu, v).T @ errors.dynamics.weighted()
        return dmu, dmu_prime

    def update_hidden_causes(self, errors: UnitErrors) -> np.ndarray:
        mu, v = self.belief.mu, self.causes
        dv = np.zeros_like(v)
        if v.size == 0:
            return dv
        if errors.eta_v is not None:
            dv -= errors.eta_v.weighted()
        for channel in self.channels:
            error = errors.observations.get(channel.name)
            if error is None or channel.likelihood.jacobian_v is None:
                continue
            dv += channel.likelihood.jacobian_v(self._source(channel), v).T @ error.weighted()
        if self.dynamics.jacobian_v is not None:
            dv += self.dynamics.jacobian_v(mu, v).T @ errors.dynamics.weighted()
        return dv

    def update_action(self, errors: UnitErrors) -> np.ndarray:
        """Action rate from proprioceptive errors only: ``-gain * Pi_p * eps_p``."""
        rate = np.zeros(self.action_dim)
        for channel in self.channels:
            error = errors.observations.get(channel.name)
            if error is None or not channel.proprioceptive:
                continue
            targets = channel.actuated or tuple(range(error.value.size))
            rate[list(targets)] -= self.action_gain * error.weighted()
        return rate

    def free_energy(self, observations: Mapping[str, np.ndarray]) -> float:
        return laplace_free_energy(self.compute_errors(observations).as_list())

    def step(
        self, observations: Mapping[str, np.ndarray], dt: float
    ) -> Tuple[np.ndarray, StepReport]:
        """
        Advance the unit by one synchronous tick.

        Args:
            observations: Observation vector per channel name
            dt: Integration step

        Returns:
            Tuple of the action rate and the step report

        Raises:
            NumericAbortError: If any belief or the action becomes non-finite
        """
        errors = self.compute_errors(observations)
        dmu, dmu_prime = self.update_hidden_states(errors)
        dv = self.update_hidden_causes(errors)
        action = self.update_action(errors)

        mu = euler_step(self.belief.mu, dmu, dt)
        mu_prime = euler_step(self.belief.mu_prime, dmu_prime, dt)
        causes = euler_step(self.causes, dv, dt) if self.causes.size else self.causes

        for term, value in (("mu", mu), ("mu_prime", mu_prime), ("causes", causes), ("action", action)):
            if not np.all(np.isfinite(value)):
                logger.error(f"Unit {self.name}: non-finite {term}")
                raise NumericAbortError(term=term, module_path=self.name)

        self.belief = GeneralizedBelief(mu, mu_prime)
        self.causes = causes
        report = StepReport(
            free_energy=laplace_free_energy(errors.as_list()),
            error_norms=errors.norms(),
            missing=errors.missing,
            action=action,
        )
        return action, report
