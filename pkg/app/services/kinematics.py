"""Planar kinematic chains and the intrinsic-extrinsic (IE) module hierarchy.

A module carries one or more joints. Its intrinsic belief is
``[theta_1..theta_k, l_1..l_k]`` (joint angles relative to the parent frame
and limb lengths), its extrinsic belief ``[x, y, psi]`` is the pose at the end
of its last limb. Every module is duplicated once per pathway: ``self`` is
the real body, entity pathways hold potential body configurations inferred
from exteroception only.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from operator import itemgetter
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.services.generalized import GeneralizedBelief, Precision, as_vector
from app.services.hybrid import HybridUnit, evidence_from
from app.services.intention import EntityFactorization, Intention, mix_jacobians
from app.utils.exceptions import ConfigurationError, ContractViolationError, NumericAbortError
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)

INTRINSIC = "intrinsic"
EXTRINSIC = "extrinsic"
ROOT = "root"
EXTRINSIC_DIM = 3


@dataclass(frozen=True)
class IntrinsicState:
    angle: float
    length: float

    def __post_init__(self):
        if self.length < 0:
            raise ContractViolationError(f"limb length must be non-negative, got {self.length}")


@dataclass(frozen=True)
class ExtrinsicState:
    position: Tuple[float, float]
    orientation: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.orientation], dtype=float)

    @classmethod
    def from_vector(cls, pose) -> "ExtrinsicState":
        vec = as_vector(pose, "pose")
        return cls((float(vec[0]), float(vec[1])), float(vec[2]))


def roto_translate(parent: ExtrinsicState, intr: IntrinsicState) -> ExtrinsicState:
    orientation = parent.orientation + intr.angle
    return ExtrinsicState(
        (
            parent.position[0] + intr.length * np.cos(orientation),
            parent.position[1] + intr.length * np.sin(orientation),
        ),
        orientation,
    )


def forward_kinematics(
    chain: Sequence[IntrinsicState], root: ExtrinsicState
) -> List[ExtrinsicState]:
    if not chain:
        raise ContractViolationError("forward kinematics needs a non-empty chain")
    poses = []
    pose = root
    for link in chain:
        pose = roto_translate(pose, link)
        poses.append(pose)
    return poses


@dataclass(frozen=True)
class ChainPose:
    pose: np.ndarray
    jac_parent: np.ndarray
    jac_intrinsic: np.ndarray


def chain_pose(parent_pose, intrinsic) -> ChainPose:
    """
    Pose at the end of a k-joint chain and its Jacobians.

    Args:
        parent_pose: Parent extrinsic ``[x, y, psi]``
        intrinsic: ``[theta_1..theta_k, l_1..l_k]``

    Returns:
        ChainPose: End pose, ``d pose / d parent`` (3x3) and
        ``d pose / d intrinsic`` (3x2k)
    """
    parent = as_vector(parent_pose, "parent pose")
    intr = as_vector(intrinsic, "intrinsic state")
    if parent.size != EXTRINSIC_DIM or intr.size % 2:
        raise ContractViolationError(
            f"chain_pose expects a 3-vector parent and [angles, lengths], got "
            f"{parent.size} and {intr.size}"
        )
    k = intr.size // 2
    angles, lengths = intr[:k], intr[k:]
    orientations = parent[2] + np.cumsum(angles)
    steps = np.stack([lengths * np.cos(orientations), lengths * np.sin(orientations)], axis=1)
    pivots = parent[:2] + np.vstack([np.zeros(2), np.cumsum(steps, axis=0)[:-1]])
    end = parent[:2] + steps.sum(axis=0)
    pose = np.array([end[0], end[1], orientations[-1]])

    jac_parent = np.array(
        [
            [1.0, 0.0, -(end[1] - parent[1])],
            [0.0, 1.0, end[0] - parent[0]],
            [0.0, 0.0, 1.0],
        ]
    )
    jac_intrinsic = np.zeros((EXTRINSIC_DIM, 2 * k))
    # A joint rotates everything distal to its pivot.
    jac_intrinsic[0, :k] = -(end[1] - pivots[:, 1])
    jac_intrinsic[1, :k] = end[0] - pivots[:, 0]
    jac_intrinsic[2, :k] = 1.0
    jac_intrinsic[0, k:] = np.cos(orientations)
    jac_intrinsic[1, k:] = np.sin(orientations)
    return ChainPose(pose, jac_parent, jac_intrinsic)


def ie_gradients(
    parent_pose, intrinsic, extrinsic_belief, precision: Precision
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backpropagate the extrinsic link error of one module.

    Args:
        parent_pose: Parent extrinsic belief ``[x, y, psi]``
        intrinsic: Module intrinsic belief
        extrinsic_belief: Module extrinsic belief
        precision: Link precision (3x3)

    Returns:
        Tuple of ``J_parent^T Pi eps`` and ``J_intrinsic^T Pi eps`` with
        ``eps = extrinsic_belief - g(parent, intrinsic)``
    """
    geometry = chain_pose(parent_pose, intrinsic)
    eps = as_vector(extrinsic_belief, "extrinsic belief") - geometry.pose
    weighted = precision.matrix @ eps
    return geometry.jac_parent.T @ weighted, geometry.jac_intrinsic.T @ weighted


@dataclass(frozen=True)
class RepulsiveField:
    """
    Extrinsic repulsion ``k * d / r^3`` of one block away from another.

    ``d`` is the position offset from the obstacle block, ``r`` its norm
    floored at ``min_distance``; the field vanishes beyond ``cutoff``.
    """

    source: str
    obstacle: str
    strength: float
    cutoff: float
    min_distance: float = 0.05

    def evaluate(self, factorization: EntityFactorization, x) -> Tuple[np.ndarray, np.ndarray]:
        n = factorization.dim
        f = np.zeros(n)
        jac = np.zeros((n, n))
        src = factorization.block(self.source).start
        obs = factorization.block(self.obstacle).start
        offset = x[src : src + 2] - x[obs : obs + 2]
        r = max(float(np.linalg.norm(offset)), self.min_distance)
        if r >= self.cutoff:
            return f, jac
        f[src : src + 2] = self.strength * offset / r**3
        local = self.strength * (np.eye(2) / r**3 - 3.0 * np.outer(offset, offset) / r**5)
        jac[src : src + 2, src : src + 2] += local
        jac[src : src + 2, obs : obs + 2] -= local
        return f, jac


@dataclass
class PathwayBeliefs:
    intrinsic: GeneralizedBelief
    extrinsic: GeneralizedBelief


@dataclass
class IEModule:
    name: str
    parent: Optional[str]
    lengths: np.ndarray
    angles: np.ndarray
    virtual: bool = False
    children: List[str] = field(default_factory=list)
    beliefs: Dict[str, PathwayBeliefs] = field(default_factory=dict)

    @property
    def n_joints(self) -> int:
        return int(self.lengths.size)

    @property
    def pathways(self) -> List[str]:
        return list(self.beliefs)


@dataclass(frozen=True)
class VirtualPrior:
    """Pull a pathway's virtual limbs toward another pathway's."""

    pathway: str
    precision: float


@dataclass
class Pathway:
    name: str
    root: GeneralizedBelief
    is_self: bool = False
    root_free: bool = False
    length_prior: float = 0.0
    members: List[str] = field(default_factory=list)
    length_targets: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)
    prior_from: Optional[VirtualPrior] = None


@dataclass(frozen=True)
class NetworkChannel:
    name: str
    pathway: str
    module: str
    domain: str
    components: Tuple[int, ...]
    precision: float
    order: int = 0
    proprioceptive: bool = False


@dataclass
class LevelSnapshot:
    x: np.ndarray
    mu_prime: np.ndarray
    eta_prime: np.ndarray
    trajectories: List[np.ndarray]


@dataclass
class DynamicsLevel:
    """Intention-driven dynamics over one module/domain across pathways."""

    module: str
    domain: str
    pathways: Tuple[str, ...]
    intentions: List[Intention]
    precision: float
    gains: Optional[np.ndarray] = None
    hybrid: Optional[HybridUnit] = None
    mask: Optional[np.ndarray] = None
    fields: List[RepulsiveField] = field(default_factory=list)
    max_gain: float = 1.0
    name: str = ""
    factorization: Optional[EntityFactorization] = None
    last: Optional[LevelSnapshot] = None

    def __post_init__(self):
        if not self.name:
            self.name = f"{self.module}/{self.domain}"
        if self.hybrid is None:
            gains = np.zeros(len(self.intentions)) if self.gains is None else self.gains
            self.gains = np.clip(as_vector(gains, "gains"), 0.0, self.max_gain)

    @property
    def causes(self) -> np.ndarray:
        return self.hybrid.causes if self.hybrid is not None else self.gains

    def set_gains(self, values) -> None:
        if self.hybrid is not None:
            raise ContractViolationError(f"level {self.name} takes its causes from a hybrid unit")
        self.gains = np.clip(as_vector(values, "gains"), 0.0, self.max_gain)


@dataclass(frozen=True)
class TermRecord:
    kind: str
    source: str
    pathway: str
    module: str
    domain: str


@dataclass
class NetworkReport:
    free_energy: float
    action: Dict[str, np.ndarray]
    terms: List[TermRecord]
    error_norms: Dict[str, float]


class _Ledger:
    """Collects contributions per target and sums them in source order."""

    def __init__(self):
        self._grads: Dict[tuple, List[Tuple[str, np.ndarray]]] = defaultdict(list)
        self._energy: List[Tuple[str, float]] = []

    def add(self, target: tuple, source: str, value: np.ndarray) -> None:
        self._grads[target].append((source, value))

    def energy(self, source: str, value: float) -> None:
        self._energy.append((source, value))

    def total(self, target: tuple, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        for _, value in sorted(self._grads.get(target, ()), key=itemgetter(0)):
            out = out + value
        return out

    def targets(self, kind: str) -> List[tuple]:
        return [target for target in self._grads if target[0] == kind]

    def free_energy(self) -> float:
        total = 0.0
        for _, value in sorted(self._energy, key=itemgetter(0)):
            total += value
        return total


class KinematicNetwork:
    """
    Synchronous hierarchy of IE modules with parallel pathways.

    All predictions and errors of a tick read the pre-tick beliefs; every
    belief is integrated once at the end of the tick.
    """

    def __init__(
        self,
        link_precision: float = 1.0,
        default_dynamics_precision: float = 1.0,
        action_gain: float = 1.0,
        name: str = "network",
    ):
        self.name = name
        self.link_precision = float(link_precision)
        self.default_dynamics_precision = float(default_dynamics_precision)
        self.action_gain = float(action_gain)
        self.modules: Dict[str, IEModule] = {}
        self.pathways: Dict[str, Pathway] = {}
        self.channels: List[NetworkChannel] = []
        self.levels: List[DynamicsLevel] = []
        self._link = Precision.scalar(self.link_precision, EXTRINSIC_DIM)

    # Structure

    def add_module(self, name: str, parent: Optional[str], lengths, angles) -> IEModule:
        if name in self.modules or name == ROOT:
            raise ConfigurationError(
                f"module name '{name}' is taken",
                violations=[("modules", None, f"duplicate or reserved module name '{name}'")],
            )
        if parent is not None and parent not in self.modules:
            raise ConfigurationError.from_reference(f"modules.{name}.parent", parent)
        lengths = as_vector(lengths, "lengths").copy()
        angles = as_vector(angles, "angles").copy()
        if lengths.size != angles.size or lengths.size == 0:
            raise ContractViolationError(f"module '{name}' needs matching angles and lengths")
        module = IEModule(name, parent, lengths, angles)
        self.modules[name] = module
        if parent is not None:
            self.modules[parent].children.append(name)
        return module

    def ancestry(self, module: str) -> List[str]:
        chain = []
        current: Optional[str] = module
        while current is not None:
            if current in chain:
                raise ConfigurationError(
                    f"module graph has a cycle through '{current}'",
                    violations=[("modules", None, f"cycle through '{current}'")],
                )
            chain.append(current)
            current = self.modules[current].parent
        return list(reversed(chain))

    def _parent_pose(self, module: IEModule, pathway: str) -> np.ndarray:
        if module.parent is None:
            return self.pathways[pathway].root.mu
        return self.modules[module.parent].beliefs[pathway].extrinsic.mu

    def _join(self, pathway: Pathway, module: IEModule, angles=None, lengths=None, virtual=False):
        angles = module.angles if angles is None else as_vector(angles, "angles")
        lengths = module.lengths if lengths is None else as_vector(lengths, "lengths")
        if angles.size != module.n_joints or lengths.size != module.n_joints:
            raise ContractViolationError(
                f"pathway '{pathway.name}' initial state of '{module.name}' has wrong size"
            )
        intrinsic = GeneralizedBelief(np.concatenate([angles, lengths]))
        pose = chain_pose(self._parent_pose(module, pathway.name), intrinsic.mu).pose
        module.beliefs[pathway.name] = PathwayBeliefs(intrinsic, GeneralizedBelief(pose))
        pathway.members.append(module.name)
        pathway.length_targets[module.name] = None if virtual else module.lengths.copy()

    def add_self_pathway(self, root=(0.0, 0.0, 0.0), name: str = "self") -> Pathway:
        if any(p.is_self for p in self.pathways.values()):
            raise ConfigurationError(
                "network already has a self pathway",
                violations=[("pathways", None, "more than one self pathway")],
            )
        pathway = Pathway(name, GeneralizedBelief(as_vector(root, "root")), is_self=True)
        self.pathways[name] = pathway
        for module in self.modules.values():
            if not module.virtual:
                self._join(pathway, module)
        return pathway

    def attach_entity_pathway(
        self,
        entity: str,
        level: Optional[str] = None,
        root=(0.0, 0.0, 0.0),
        root_free: bool = False,
        length_prior: float = 1.0,
        initial_angles: Optional[Mapping[str, Sequence[float]]] = None,
        channel: Optional[NetworkChannel] = None,
    ) -> Pathway:
        """
        Add a parallel factor block for an entity up to ``level``.

        Args:
            entity: Pathway name
            level: Module the entity is observed at; ``None`` spans the whole
                body, ``"root"`` keeps only the root frame (which is then free)
            root: Root frame of the pathway (another agent's base for
                other-agent pathways)
            root_free: Infer the root frame instead of clamping it
            length_prior: Precision pulling inferred lengths toward the body's
            initial_angles: Optional initial joint angles per module
            channel: Optional observation channel to add with the pathway

        Returns:
            Pathway: The new pathway

        Raises:
            ConfigurationError: On duplicate names or unknown levels
        """
        if entity in self.pathways:
            raise ConfigurationError(
                f"duplicate pathway '{entity}'",
                violations=[("pathways", None, f"duplicate entity '{entity}'")],
            )
        if level is not None and level != ROOT and level not in self.modules:
            raise ConfigurationError.from_reference(f"pathways.{entity}.level", level)
        pathway = Pathway(
            entity,
            GeneralizedBelief(as_vector(root, "root")),
            root_free=root_free or level == ROOT,
            length_prior=float(length_prior),
        )
        self.pathways[entity] = pathway
        if level is None:
            chain = [name for name, m in self.modules.items() if not m.virtual]
        elif level == ROOT:
            chain = []
        else:
            chain = self.ancestry(level)
        initial_angles = initial_angles or {}
        for name in chain:
            self._join(pathway, self.modules[name], angles=initial_angles.get(name))
        if channel is not None:
            self.add_channel(channel)
        logger.debug(f"Network {self.name}: attached pathway {entity} up to {level or 'body'}")
        return pathway

    def attach_virtual_level(
        self,
        pathway: str,
        name: str,
        parent: str,
        lengths,
        angles,
        prior_from: Optional[VirtualPrior] = None,
    ) -> IEModule:
        """
        Extend a non-self pathway beyond ``parent`` with a virtual module.

        A virtual module already created for another pathway is shared.

        Raises:
            ConfigurationError: For the self pathway or unknown references
        """
        if pathway not in self.pathways:
            raise ConfigurationError.from_reference("virtual.pathway", pathway)
        target = self.pathways[pathway]
        if target.is_self:
            raise ConfigurationError(
                "virtual levels cannot extend the self pathway",
                violations=[(f"pathways.{pathway}.virtual", None, "self pathway has no virtual limbs")],
            )
        if parent not in self.modules or pathway not in self.modules[parent].beliefs:
            raise ConfigurationError.from_reference(f"pathways.{pathway}.virtual.parent", parent)
        module = self.modules.get(name)
        if module is None:
            module = self.add_module(name, parent, lengths, angles)
            module.virtual = True
        elif not module.virtual or module.parent != parent:
            raise ConfigurationError(
                f"module '{name}' already exists and is not a virtual child of '{parent}'",
                violations=[(f"pathways.{pathway}.virtual", None, f"conflicting module '{name}'")],
            )
        self._join(target, module, angles=angles, lengths=lengths, virtual=True)
        if prior_from is not None:
            if prior_from.pathway not in self.pathways:
                raise ConfigurationError.from_reference(
                    f"pathways.{pathway}.prior_from", prior_from.pathway
                )
            target.prior_from = prior_from
        return module

    def add_channel(self, channel: NetworkChannel) -> None:
        where = f"channels.{channel.name}"
        if any(c.name == channel.name for c in self.channels):
            raise ConfigurationError(
                f"duplicate channel '{channel.name}'", violations=[(where, None, "duplicate name")]
            )
        if channel.pathway not in self.pathways:
            raise ConfigurationError.from_reference(f"{where}.pathway", channel.pathway)
        if channel.module == ROOT:
            dim = EXTRINSIC_DIM
            if channel.domain != EXTRINSIC:
                raise ConfigurationError(
                    "root channels observe the extrinsic frame",
                    violations=[(f"{where}.domain", None, "root has no intrinsic state")],
                )
        else:
            module = self.modules.get(channel.module)
            if module is None or channel.pathway not in module.beliefs:
                raise ConfigurationError.from_reference(f"{where}.module", channel.module)
            dim = EXTRINSIC_DIM if channel.domain == EXTRINSIC else 2 * module.n_joints
        if channel.domain not in (INTRINSIC, EXTRINSIC):
            raise ConfigurationError(
                f"unknown domain '{channel.domain}'", violations=[(f"{where}.domain", None, "unknown")]
            )
        if not channel.components or any(not 0 <= c < dim for c in channel.components):
            raise ConfigurationError(
                f"channel '{channel.name}' components out of range",
                violations=[(f"{where}.components", None, f"valid range is 0..{dim - 1}")],
            )
        if channel.proprioceptive:
            pathway = self.pathways[channel.pathway]
            if not pathway.is_self or channel.domain != INTRINSIC or channel.order != 0:
                raise ConfigurationError(
                    "proprioception must observe self intrinsic angles",
                    violations=[(where, None, "proprioceptive channel outside the self pathway")],
                )
            if max(channel.components) >= self.modules[channel.module].n_joints:
                raise ConfigurationError(
                    "proprioception observes joint angles only",
                    violations=[(f"{where}.components", None, "length components are not sensed")],
                )
        self.channels.append(channel)

    def add_level(self, level: DynamicsLevel) -> DynamicsLevel:
        module = self.modules.get(level.module)
        where = f"levels.{level.name}"
        if module is None:
            raise ConfigurationError.from_reference(f"{where}.module", level.module)
        for pathway in level.pathways:
            if pathway not in module.beliefs:
                raise ConfigurationError.from_reference(f"{where}.pathways", pathway)
        if any(l.module == level.module and l.domain == level.domain for l in self.levels):
            raise ConfigurationError(
                f"module '{level.module}' already has {level.domain} dynamics",
                violations=[(where, None, "duplicate level")],
            )
        if not level.intentions:
            raise ConfigurationError(
                f"level {level.name} has no intentions",
                violations=[(f"{where}.intentions", None, "at least one intention required")],
            )
        block = EXTRINSIC_DIM if level.domain == EXTRINSIC else 2 * module.n_joints
        level.factorization = EntityFactorization(tuple(level.pathways), block)
        for intention in level.intentions:
            if intention.dim != level.factorization.dim:
                raise ContractViolationError(
                    f"intention '{intention.name}' has dimension {intention.dim}, "
                    f"level {level.name} has {level.factorization.dim}"
                )
        if level.causes.size != len(level.intentions):
            raise ContractViolationError(
                f"level {level.name}: {level.causes.size} causes for {len(level.intentions)} intentions"
            )
        self.levels.append(level)
        return level

    # Access

    def belief(self, module: str, pathway: str, domain: str) -> GeneralizedBelief:
        if module == ROOT:
            return self.pathways[pathway].root
        beliefs = self.modules[module].beliefs[pathway]
        return beliefs.extrinsic if domain == EXTRINSIC else beliefs.intrinsic

    def level(self, module: str, domain: str) -> DynamicsLevel:
        for level in self.levels:
            if level.module == module and level.domain == domain:
                return level
        raise ConfigurationError.from_reference("levels", f"{module}/{domain}")

    def velocity_channel_precision(self, level: DynamicsLevel) -> np.ndarray:
        """Diagonal precision that order-1 channels add on a level's components."""
        diag = np.zeros(level.factorization.dim)
        for channel in self.channels:
            if channel.order != 1 or channel.module != level.module or channel.domain != level.domain:
                continue
            if channel.pathway not in level.pathways:
                continue
            start = level.factorization.block(channel.pathway).start
            for comp in channel.components:
                diag[start + comp] += channel.precision
        return diag

    # Tick

    def tick(
        self,
        observations: Mapping[str, np.ndarray],
        dt: float,
        order: Optional[Sequence[str]] = None,
    ) -> NetworkReport:
        """
        One synchronous tick of the whole hierarchy.

        Args:
            observations: Observation vector per channel name
            dt: Integration step
            order: Optional module evaluation order; the result does not
                depend on it

        Returns:
            NetworkReport: Free energy, action rate per module, term provenance

        Raises:
            NumericAbortError: Naming the module and pathway of a non-finite belief
        """
        if dt <= 0:
            raise ContractViolationError(f"dt must be positive, got {dt}")
        names = list(order) if order is not None else list(self.modules)
        if sorted(names) != sorted(self.modules):
            raise ContractViolationError("tick order must be a permutation of the modules")

        ledger = _Ledger()
        terms: List[TermRecord] = []
        norms: Dict[str, float] = {}

        for name in names:
            self._link_terms(self.modules[name], ledger, terms, norms)
        self._virtual_priors(ledger, terms)
        self._channel_terms(observations, ledger, terms, norms)
        levelled = set()
        for level in self._levels_in(names):
            levelled.add((level.module, level.domain))
            self._level_terms(level, ledger, terms, norms)
        for name in names:
            for domain in (EXTRINSIC, INTRINSIC):
                if (name, domain) not in levelled:
                    self._default_dynamics(self.modules[name], domain, ledger)
        for pathway in self.pathways.values():
            if pathway.root_free:
                mp = pathway.root.mu_prime
                ledger.energy(f"root:{pathway.name}", 0.5 * self.default_dynamics_precision * float(mp @ mp))
                ledger.add(("mu_prime", ROOT, pathway.name), f"root:{pathway.name}",
                           -self.default_dynamics_precision * mp)

        self._integrate(ledger, dt)

        for level in self.levels:
            if level.hybrid is not None and level.last is not None:
                evidence_from(level.hybrid, level.last, dt)

        action = {
            target[1]: self.action_gain * ledger.total(target, self.modules[target[1]].n_joints)
            for target in ledger.targets("action")
        }
        return NetworkReport(ledger.free_energy(), action, terms, norms)

    def _levels_in(self, names: Sequence[str]) -> List[DynamicsLevel]:
        rank = {name: i for i, name in enumerate(names)}
        return sorted(self.levels, key=lambda level: rank[level.module])

    def _link_terms(self, module: IEModule, ledger: _Ledger, terms, norms) -> None:
        for pathway_name, beliefs in module.beliefs.items():
            source = f"link:{module.name}:{pathway_name}"
            parent = self._parent_pose(module, pathway_name)
            geometry = chain_pose(parent, beliefs.intrinsic.mu)
            eps = beliefs.extrinsic.mu - geometry.pose
            weighted = self.link_precision * eps
            ledger.energy(source, 0.5 * float(eps @ weighted))
            ledger.add(("mu", EXTRINSIC, module.name, pathway_name), source, -weighted)
            ledger.add(("mu", INTRINSIC, module.name, pathway_name), source,
                       geometry.jac_intrinsic.T @ weighted)
            parent_target = (
                ("mu", ROOT, pathway_name)
                if module.parent is None
                else ("mu", EXTRINSIC, module.parent, pathway_name)
            )
            ledger.add(parent_target, source, geometry.jac_parent.T @ weighted)
            terms.append(TermRecord("link", source, pathway_name, module.name, EXTRINSIC))
            norms[source] = float(np.linalg.norm(eps))

            pathway = self.pathways[pathway_name]
            target_lengths = pathway.length_targets.get(module.name)
            if not pathway.is_self and target_lengths is not None and pathway.length_prior > 0:
                k = module.n_joints
                err = beliefs.intrinsic.mu[k:] - target_lengths
                grad = np.zeros(2 * k)
                grad[k:] = -pathway.length_prior * err
                ledger.energy(f"length:{module.name}:{pathway_name}",
                              0.5 * pathway.length_prior * float(err @ err))
                ledger.add(("mu", INTRINSIC, module.name, pathway_name),
                           f"length:{module.name}:{pathway_name}", grad)
                terms.append(TermRecord("length_prior", f"length:{module.name}:{pathway_name}",
                                        pathway_name, module.name, INTRINSIC))

    def _virtual_priors(self, ledger: _Ledger, terms) -> None:
        for pathway in self.pathways.values():
            coupling = pathway.prior_from
            if coupling is None:
                continue
            for name in pathway.members:
                module = self.modules[name]
                if not module.virtual or coupling.pathway not in module.beliefs:
                    continue
                source = f"virtual:{name}:{pathway.name}"
                err = module.beliefs[pathway.name].intrinsic.mu - module.beliefs[coupling.pathway].intrinsic.mu
                ledger.energy(source, 0.5 * coupling.precision * float(err @ err))
                ledger.add(("mu", INTRINSIC, name, pathway.name), source, -coupling.precision * err)
                terms.append(TermRecord("virtual_prior", source, pathway.name, name, INTRINSIC))

    def _channel_terms(self, observations, ledger: _Ledger, terms, norms) -> None:
        for channel in self.channels:
            value = observations.get(channel.name)
            if value is None:
                continue
            belief = self.belief(channel.module, channel.pathway, channel.domain)
            order_key = "mu_prime" if channel.order == 1 else "mu"
            state = belief.mu_prime if channel.order == 1 else belief.mu
            comps = list(channel.components)
            eps = as_vector(value, channel.name) - state[comps]
            if eps.size != len(comps):
                raise ContractViolationError(
                    f"channel '{channel.name}' expects {len(comps)} values, got {eps.size}"
                )
            weighted = channel.precision * eps
            source = f"channel:{channel.name}"
            ledger.energy(source, 0.5 * float(eps @ weighted))
            grad = np.zeros(belief.dim)
            grad[comps] = weighted
            domain = EXTRINSIC if channel.module == ROOT else channel.domain
            target = (
                (order_key, ROOT, channel.pathway)
                if channel.module == ROOT
                else (order_key, domain, channel.module, channel.pathway)
            )
            ledger.add(target, source, grad)
            kind = "proprioceptive" if channel.proprioceptive else "exteroceptive"
            terms.append(TermRecord(kind, source, channel.pathway, channel.module, domain))
            norms[source] = float(np.linalg.norm(eps))
            if channel.proprioceptive:
                rate = np.zeros(self.modules[channel.module].n_joints)
                rate[comps] = -weighted
                ledger.add(("action", channel.module), source, rate)

    def _level_terms(self, level: DynamicsLevel, ledger: _Ledger, terms, norms) -> None:
        module = self.modules[level.module]
        beliefs = [
            module.beliefs[p].extrinsic if level.domain == EXTRINSIC else module.beliefs[p].intrinsic
            for p in level.pathways
        ]
        x = np.concatenate([b.mu for b in beliefs])
        mu_prime = np.concatenate([b.mu_prime for b in beliefs])
        causes = level.causes

        trajectories = [intention.W @ x + intention.b - x for intention in level.intentions]
        eta_prime = np.zeros_like(x)
        for weight, trajectory in zip(causes, trajectories):
            eta_prime = eta_prime + weight * trajectory
        jac = mix_jacobians(causes, level.intentions)
        field_total = np.zeros_like(x)
        for repulsion in level.fields:
            f, fj = repulsion.evaluate(level.factorization, x)
            field_total = field_total + f
            jac = jac + fj
        eta_prime = eta_prime + field_total

        eps = mu_prime - eta_prime
        if level.mask is not None:
            eps = eps * level.mask
        weighted = level.precision * eps
        source = f"level:{level.module}:{level.domain}"
        ledger.energy(source, 0.5 * float(eps @ weighted))
        grad_mu = jac.T @ weighted
        for pathway in level.pathways:
            block = level.factorization.block(pathway)
            ledger.add(("mu", level.domain, level.module, pathway), source, grad_mu[block])
            ledger.add(("mu_prime", level.domain, level.module, pathway), source, -weighted[block])
            terms.append(TermRecord("dynamics", source, pathway, level.module, level.domain))
        norms[source] = float(np.linalg.norm(eps))
        # Masked components carry no evidence either.
        mask = np.ones_like(x) if level.mask is None else level.mask
        level.last = LevelSnapshot(
            x=x,
            mu_prime=mu_prime * mask,
            eta_prime=eta_prime * mask,
            trajectories=[(trajectory + field_total) * mask for trajectory in trajectories],
        )

    def _default_dynamics(self, module: IEModule, domain: str, ledger: _Ledger) -> None:
        pi = self.default_dynamics_precision
        for pathway_name, beliefs in module.beliefs.items():
            mp = beliefs.extrinsic.mu_prime if domain == EXTRINSIC else beliefs.intrinsic.mu_prime
            source = f"default:{module.name}:{domain}:{pathway_name}"
            ledger.energy(source, 0.5 * pi * float(mp @ mp))
            ledger.add(("mu_prime", domain, module.name, pathway_name), source, -pi * mp)

    def _integrate(self, ledger: _Ledger, dt: float) -> None:
        updates = []
        for module in self.modules.values():
            for pathway_name, beliefs in module.beliefs.items():
                pathway = self.pathways[pathway_name]
                for domain, belief in ((EXTRINSIC, beliefs.extrinsic), (INTRINSIC, beliefs.intrinsic)):
                    key = (domain, module.name, pathway_name)
                    dmu = belief.mu_prime + ledger.total(("mu",) + key, belief.dim)
                    dmp = ledger.total(("mu_prime",) + key, belief.dim)
                    mu = belief.mu + dt * dmu
                    mu_prime = belief.mu_prime + dt * dmp
                    if domain == INTRINSIC:
                        k = module.n_joints
                        if pathway.is_self:
                            mu[k:] = belief.mu[k:]
                            mu_prime[k:] = 0.0
                        else:
                            mu[k:] = np.maximum(mu[k:], 0.0)
                    updates.append((f"{module.name}/{pathway_name}/{domain}", belief, mu, mu_prime))
        for pathway in self.pathways.values():
            if not pathway.root_free:
                continue
            belief = pathway.root
            dmu = belief.mu_prime + ledger.total(("mu", ROOT, pathway.name), belief.dim)
            dmp = ledger.total(("mu_prime", ROOT, pathway.name), belief.dim)
            updates.append((f"{ROOT}/{pathway.name}", belief, belief.mu + dt * dmu,
                            belief.mu_prime + dt * dmp))

        for path, _, mu, mu_prime in updates:
            if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(mu_prime))):
                logger.error(f"Network {self.name}: non-finite belief at {path}")
                raise NumericAbortError(term="belief", module_path=f"{self.name}/{path}")
        for _, belief, mu, mu_prime in updates:
            belief.mu = mu
            belief.mu_prime = mu_prime


def network_tick(
    net: KinematicNetwork, observations: Mapping[str, np.ndarray], dt: float
) -> NetworkReport:
    return net.tick(observations, dt)
