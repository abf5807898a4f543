"""Generalized-coordinate numerics shared by every continuous unit.

Beliefs are carried as two temporal orders ``[mu, mu_prime]``. Free energy is
the Laplace form ``sum 0.5 * eps^T Pi eps`` with log-determinant constants
dropped; only gradients and differences are consumed downstream.
"""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from app.utils.exceptions import ContractViolationError, NumericAbortError

PSD_TOLERANCE = 1e-10


def as_vector(values, name: str = "vector") -> np.ndarray:
    vec = np.atleast_1d(np.asarray(values, dtype=float))
    if vec.ndim != 1:
        raise ContractViolationError(f"{name} must be one-dimensional, got shape {vec.shape}")
    return vec


@dataclass
class GeneralizedBelief:
    """Posterior mean over a hidden-state path: 0th and 1st temporal orders."""

    mu: np.ndarray
    mu_prime: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mu = as_vector(self.mu, "mu").copy()
        if self.mu_prime is None:
            self.mu_prime = np.zeros_like(self.mu)
        else:
            self.mu_prime = as_vector(self.mu_prime, "mu_prime").copy()
        if self.mu.shape != self.mu_prime.shape:
            raise ContractViolationError(
                f"mu has dimension {self.mu.size} but mu_prime has {self.mu_prime.size}"
            )

    @property
    def dim(self) -> int:
        return int(self.mu.size)

    def copy(self) -> "GeneralizedBelief":
        return GeneralizedBelief(self.mu.copy(), self.mu_prime.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.mu_prime)))

    def check_finite(self, term: str, module_path: str = "") -> None:
        if not self.is_finite():
            raise NumericAbortError(term=term, module_path=module_path)


@dataclass(frozen=True)
class Precision:
    """Symmetric positive-semidefinite inverse covariance."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if mat.shape[0] != mat.shape[1]:
            raise ContractViolationError(f"precision must be square, got {mat.shape}")
        if not np.allclose(mat, mat.T, atol=1e-12, rtol=0.0):
            raise ContractViolationError("precision must be symmetric")
        if mat.size and np.linalg.eigvalsh(mat).min() < -PSD_TOLERANCE:
            raise ContractViolationError("precision must be positive semidefinite")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def scalar(cls, value: float, dim: int) -> "Precision":
        return cls(float(value) * np.eye(dim))

    @classmethod
    def diagonal(cls, values: Iterable[float]) -> "Precision":
        return cls(np.diag(as_vector(list(values), "precision diagonal")))

    @classmethod
    def full(cls, matrix) -> "Precision":
        return cls(np.asarray(matrix, dtype=float))

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def is_positive_definite(self) -> bool:
        return bool(self.matrix.size and np.linalg.eigvalsh(self.matrix).min() > PSD_TOLERANCE)

    def __add__(self, other: "Precision") -> "Precision":
        return Precision(self.matrix + other.matrix)


@dataclass(frozen=True)
class PredictionError:
    value: np.ndarray
    precision: Precision
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "value", as_vector(self.value, "prediction error"))
        if self.value.size != self.precision.dim:
            raise ContractViolationError(
                f"error {self.label or ''} has dimension {self.value.size}, "
                f"precision has {self.precision.dim}"
            )

    def weighted(self) -> np.ndarray:
        return weighted_error(self.value, self.precision)

    def energy(self) -> float:
        return 0.5 * float(self.value @ self.weighted())

    def norm(self) -> float:
        return float(np.linalg.norm(self.value))


def weighted_error(err, pi: Precision) -> np.ndarray:
    """
    Precision-weight a prediction error.

    Args:
        err: Prediction error vector
        pi: Precision of the same dimension

    Returns:
        np.ndarray: ``Pi @ err``

    Raises:
        ContractViolationError: If dimensions differ
    """
    vec = as_vector(err, "prediction error")
    if vec.size != pi.dim:
        raise ContractViolationError(
            f"error has dimension {vec.size}, precision has {pi.dim}"
        )
    return pi.matrix @ vec


def laplace_free_energy(errors: Sequence[PredictionError]) -> float:
    """Sum of ``0.5 * eps^T Pi eps`` over every error term."""
    return float(sum(error.energy() for error in errors))


def shift_operator(belief: GeneralizedBelief) -> GeneralizedBelief:
    return GeneralizedBelief(belief.mu_prime.copy(), np.zeros_like(belief.mu_prime))


def euler_step(state, derivative, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ContractViolationError(f"dt must be positive, got {dt}")
    state = as_vector(state, "state")
    derivative = as_vector(derivative, "derivative")
    if state.shape != derivative.shape:
        raise ContractViolationError(
            f"state has dimension {state.size}, derivative has {derivative.size}"
        )
    return state + dt * derivative


def safe_log(values, floor: float = 1e-10) -> np.ndarray:
    """Natural log with entries below ``floor`` clamped to ``ln(floor)``."""
    return np.log(np.maximum(np.asarray(values, dtype=float), floor))
