"""Flexible intentions over factorized hidden states.

An intention is an affine map ``i(x) = W x + b`` over the concatenation of
per-entity blocks ``x = [x_0, ..., x_N]``. Its attractor error
``i(x) - x`` is the trajectory it proposes; a cause vector mixes those
proposals into a single first-order prior.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.services.generalized import as_vector
from app.utils.exceptions import ConfigurationError, ContractViolationError


@dataclass(frozen=True)
class EntityFactorization:
    """Ordered named blocks of equal dimension; the first block is the body."""

    names: Tuple[str, ...]
    block_dim: int

    def __post_init__(self):
        if not self.names:
            raise ContractViolationError("a factorization needs at least one block")
        if len(set(self.names)) != len(self.names):
            raise ContractViolationError(f"duplicate block names in {self.names}")
        if self.block_dim <= 0:
            raise ContractViolationError("block dimension must be positive")

    @property
    def body(self) -> str:
        return self.names[0]

    @property
    def dim(self) -> int:
        return self.block_dim * len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError.from_reference("intention.pathway", name) from None

    def block(self, name: str) -> slice:
        start = self.index(name) * self.block_dim
        return slice(start, start + self.block_dim)

    def split(self, x) -> Dict[str, np.ndarray]:
        vec = as_vector(x, "factorized state")
        if vec.size != self.dim:
            raise ContractViolationError(
                f"factorized state has dimension {vec.size}, expected {self.dim}"
            )
        return {name: vec[self.block(name)].copy() for name in self.names}

    def concat(self, blocks: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = []
        for name in self.names:
            part = as_vector(blocks[name], f"block {name}")
            if part.size != self.block_dim:
                raise ContractViolationError(
                    f"block {name} has dimension {part.size}, expected {self.block_dim}"
                )
            parts.append(part)
        return np.concatenate(parts)


@dataclass(frozen=True)
class BlockTarget:
    """
    Rows of an intention written per block.

    For every listed component ``c`` of ``pathway`` the desired value is
    ``sum_p w_p * x[p, c] + bias[c]``. Components not listed keep identity rows.
    """

    pathway: str
    components: Tuple[int, ...]
    sources: Mapping[str, float] = field(default_factory=dict)
    bias: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class Intention:
    name: str
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = as_vector(self.b, "intention bias")
        if W.shape != (b.size, b.size):
            raise ContractViolationError(
                f"intention '{self.name}' has W of shape {W.shape} and b of size {b.size}"
            )
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return int(self.b.size)

    @classmethod
    def stay(cls, dim: int, name: str = "stay") -> "Intention":
        return cls(name, np.eye(dim), np.zeros(dim))

    @classmethod
    def from_targets(
        cls,
        name: str,
        factorization: EntityFactorization,
        targets: Sequence[BlockTarget],
        gain: float = 1.0,
    ) -> "Intention":
        """
        Build an intention from block targets, starting from the stay map.

        Args:
            name: Intention identifier
            factorization: Blocks the intention operates on
            targets: Row specifications, see ``BlockTarget``
            gain: Attractor gain applied through ``with_gain``

        Returns:
            Intention: The assembled map
        """
        n = factorization.dim
        W = np.eye(n)
        b = np.zeros(n)
        size = factorization.block_dim
        for target in targets:
            row_block = factorization.block(target.pathway)
            if target.bias is not None and len(target.bias) != len(target.components):
                raise ContractViolationError(
                    f"intention '{name}': bias has {len(target.bias)} values "
                    f"for {len(target.components)} components"
                )
            for k, comp in enumerate(target.components):
                if not 0 <= comp < size:
                    raise ContractViolationError(
                        f"intention '{name}': component {comp} outside block of size {size}"
                    )
                row = row_block.start + comp
                W[row, :] = 0.0
                for source, weight in target.sources.items():
                    W[row, factorization.block(source).start + comp] += float(weight)
                if target.bias is not None:
                    b[row] = float(target.bias[k])
        return cls(name, W, b).with_gain(gain)

    def with_gain(self, gain: float) -> "Intention":
        """Scale the attractor: ``f = gain * (W x + b - x)``."""
        if gain == 1.0:
            return self
        n = self.dim
        W = (1.0 - gain) * np.eye(n) + gain * self.W
        return Intention(self.name, W, gain * self.b)

    def jacobian(self) -> np.ndarray:
        return self.W - np.eye(self.dim)


def intention_state(intention: Intention, x) -> np.ndarray:
    vec = as_vector(x, "factorized state")
    if vec.size != intention.dim:
        raise ContractViolationError(
            f"intention '{intention.name}' expects dimension {intention.dim}, got {vec.size}"
        )
    return intention.W @ vec + intention.b


def attractor_error(intention: Intention, x) -> np.ndarray:
    return intention_state(intention, x) - as_vector(x)


def mix_trajectories(causes, errors: Sequence[np.ndarray]) -> np.ndarray:
    """Cause-weighted sum of attractor errors, ``sum_m v_m e_m``."""
    v = as_vector(causes, "causes")
    if v.size != len(errors):
        raise ContractViolationError(f"{v.size} causes for {len(errors)} trajectories")
    if not errors:
        return np.zeros(0)
    mixed = np.zeros_like(np.asarray(errors[0], dtype=float))
    for weight, error in zip(v, errors):
        mixed = mixed + weight * np.asarray(error, dtype=float)
    return mixed


def mix_jacobians(causes, intentions: Sequence[Intention]) -> np.ndarray:
    v = as_vector(causes, "causes")
    if v.size != len(intentions):
        raise ContractViolationError(f"{v.size} causes for {len(intentions)} intentions")
    jac = np.zeros((intentions[0].dim, intentions[0].dim))
    for weight, intention in zip(v, intentions):
        jac = jac + weight * intention.jacobian()
    return jac


def dynamics_error_full(mu_prime, eta_prime) -> np.ndarray:
    return as_vector(mu_prime, "mu_prime") - as_vector(eta_prime, "eta_prime")
