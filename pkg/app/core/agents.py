"""Agents assembled from scenario specs and bound to a world.

``UnitAgent`` wraps a single continuous unit over joint angles.
``NetworkAgent`` wraps a kinematic network together with its standalone
hybrid units, tactile switches and an optional discrete planner.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from app.schemas.scenario import (
    ActuationSpec,
    AgentSpec,
    ArmSpec,
    ChannelSpec,
    HybridUnitSpec,
    IntentionSpec,
    LevelSpec,
    NoiseSpec,
    ScenarioSpec,
    SensorModel,
)
from app.services.discrete import DiscreteModel, DiscretePlanner
from app.services.generalized import GeneralizedBelief, Precision
from app.services.hybrid import HybridUnit, ReducedModel, default_posterior_precision
from app.services.intention import BlockTarget, EntityFactorization, Intention
from app.services.kinematics import (
    EXTRINSIC,
    DynamicsLevel,
    KinematicNetwork,
    NetworkChannel,
    RepulsiveField,
    VirtualPrior,
)
from app.services.unit import ContinuousUnit, DynamicsMap, LikelihoodMap, ObservationChannel
from app.services.world import GraspRule, Joint, MotionLaw, SensorSpec, World, WorldEvent
from app.utils.exceptions import ConfigurationError, NumericAbortError
from app.utils.logging import setup_logging
from app.utils.monitoring import monitor_operation

logger = setup_logging(app_name=__name__)


@dataclass
class AgentTick:
    free_energy: float
    velocities: np.ndarray
    events: List[WorldEvent] = field(default_factory=list)


class Actuator:
    """Turns action rates into the joint velocities the world receives."""

    def __init__(self, spec: ActuationSpec, n_joints: int):
        self.mode = spec.mode
        self.action = np.zeros(n_joints)
        self.script = None if spec.velocities is None else np.asarray(spec.velocities, dtype=float)

    def __call__(self, rate: np.ndarray, dt: float) -> np.ndarray:
        if self.mode == "open_loop":
            return self.script.copy()
        if self.mode == "reflex":
            self.action = rate.copy()
            return self.action.copy()
        self.action = self.action + dt * rate
        return self.action.copy()


def sensor_spec(model: SensorModel, noise: NoiseSpec) -> SensorSpec:
    sigma = model.noise if model.noise is not None else getattr(noise, model.source)
    return SensorSpec(
        name=model.name,
        source=model.source,
        arm=model.arm,
        joints=tuple(model.joints),
        joint=model.joint,
        object=model.object,
        components=None if model.components is None else tuple(model.components),
        order=model.order,
        noise=sigma,
    )


def build_world(scenario: ScenarioSpec, seed: Optional[int] = None) -> World:
    world = World(
        seed=scenario.seed if seed is None else seed,
        dt=scenario.dt,
        contact_radius=scenario.contact_radius,
    )
    for arm in scenario.world.arms:
        joints = [
            Joint(
                name=joint.name or f"j{k}",
                parent=k - 1 if joint.parent is None else joint.parent,
                length=joint.length,
                angle=joint.angle,
            )
            for k, joint in enumerate(arm.joints)
        ]
        world.add_arm(arm.name, arm.base, joints)
    for obj in scenario.world.objects:
        motion = obj.motion
        law = MotionLaw(
            kind=motion.kind,
            velocity=None if motion.velocity is None else tuple(motion.velocity),
            center=None if motion.center is None else tuple(motion.center),
            angular_velocity=motion.angular_velocity,
            waypoints=tuple((t, tuple(p)) for t, p in motion.waypoints),
        )
        world.add_object(obj.name, obj.position, law)
    for rule in scenario.world.grasp:
        world.add_grasp_rule(
            GraspRule(
                arm=rule.arm,
                joint=rule.joint,
                contact_object=rule.contact_object,
                objects=tuple(rule.objects or [rule.contact_object]),
                fingers=dict(rule.fingers),
                tolerance=rule.tolerance,
            )
        )
    for model in scenario.sensors:
        world.check_sensor(sensor_spec(model, scenario.noise))
    return world


def build_intention(
    spec: IntentionSpec, factorization: EntityFactorization, gain: float
) -> Intention:
    gain = spec.gain or gain
    if spec.W is not None:
        return Intention(spec.name, np.asarray(spec.W, dtype=float), np.asarray(spec.b, dtype=float)).with_gain(gain)
    targets = [
        BlockTarget(
            pathway=target.pathway,
            components=tuple(target.components),
            sources=dict(target.from_),
            bias=None if target.bias is None else tuple(target.bias),
        )
        for target in spec.targets
    ]
    return Intention.from_targets(spec.name, factorization, targets, gain=gain)


def _one_hot(size: int, index: int = 0) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


class Agent:
    """Common plumbing: sensors, actuation and probe naming."""

    def __init__(self, spec: AgentSpec, arm: ArmSpec, sensors: Mapping[str, SensorSpec]):
        self.spec = spec
        self.name = spec.name
        self.arm = spec.arm
        self.n_joints = len(arm.joints)
        self.actuator = Actuator(spec.actuation, self.n_joints)
        self.sensors: Dict[str, SensorSpec] = dict(sensors)
        self.events: List[WorldEvent] = []

    def sensor_list(self) -> List[SensorSpec]:
        return list(self.sensors.values())

    def _channel_observations(self, channels: Sequence[ChannelSpec], observations) -> Dict[str, np.ndarray]:
        out = {}
        for channel in channels:
            value = observations.get(channel.sensor_name)
            if value is not None:
                out[channel.name] = value
        return out

    def tick(self, observations: Mapping[str, np.ndarray], dt: float, tick: int) -> AgentTick:
        raise NotImplementedError

    def probes(self) -> Dict[str, float]:
        raise NotImplementedError


class UnitAgent(Agent):
    def __init__(self, spec: AgentSpec, arm: ArmSpec, sensors: Mapping[str, SensorSpec]):
        super().__init__(spec, arm, sensors)
        dim = len(spec.mu)
        self.joints = list(spec.joints) if spec.joints is not None else list(range(dim))
        causes = np.asarray(spec.causes or [], dtype=float)
        dynamics = spec.dynamics
        if dynamics.kind == "attractor":
            dynamics_map = DynamicsMap.attractor(dynamics.target, dynamics.gain)
        elif dynamics.kind == "cause_attractor":
            dynamics_map = DynamicsMap.cause_attractor(dim, dynamics.gain)
        else:
            dynamics_map = DynamicsMap.zero(dim)
        channels = []
        for channel in spec.channels:
            likelihood = (
                LikelihoodMap.on_causes(dim, causes.size, channel.components)
                if channel.kind == "cause"
                else LikelihoodMap.identity(dim, channel.components)
            )
            channels.append(
                ObservationChannel(
                    name=channel.name,
                    likelihood=likelihood,
                    precision=Precision.scalar(channel.precision, len(channel.components)),
                    order=channel.order,
                    proprioceptive=channel.proprioceptive,
                    actuated=tuple(channel.components) if channel.proprioceptive else None,
                )
            )
        self.unit = ContinuousUnit(
            name=spec.name,
            belief=GeneralizedBelief(spec.mu),
            dynamics=dynamics_map,
            dynamics_precision=Precision.scalar(spec.dynamics_precision, dim),
            channels=channels,
            causes=causes,
            action_gain=spec.actuation.gain,
        )
        self.last_rate = np.zeros(self.n_joints)

    def tick(self, observations, dt, tick) -> AgentTick:
        try:
            rate, report = self.unit.step(self._channel_observations(self.spec.channels, observations), dt)
        except NumericAbortError as e:
            raise e.at_tick(tick)
        full = np.zeros(self.n_joints)
        for k, joint in enumerate(self.joints[: rate.size]):
            full[joint] = rate[k]
        self.last_rate = full
        return AgentTick(report.free_energy, self.actuator(full, dt))

    def probes(self) -> Dict[str, float]:
        row = {}
        belief = self.unit.belief
        for k in range(belief.dim):
            row[f"{self.name}.mu[{k}]"] = float(belief.mu[k])
            row[f"{self.name}.mu_prime[{k}]"] = float(belief.mu_prime[k])
        for k, value in enumerate(self.unit.causes):
            row[f"{self.name}.v[{k}]"] = float(value)
        for k, value in enumerate(self.actuator.action):
            row[f"{self.name}.action[{k}]"] = float(value)
        return row


@dataclass
class TactileSwitch:
    name: str
    sensor: str
    unit: ContinuousUnit
    level: DynamicsLevel
    target: int
    threshold: float
    latched: bool = False


class NetworkAgent(Agent):
    def __init__(self, spec: AgentSpec, arm: ArmSpec, sensors: Mapping[str, SensorSpec]):
        super().__init__(spec, arm, sensors)
        self.net = KinematicNetwork(
            link_precision=spec.link_precision,
            default_dynamics_precision=spec.default_dynamics_precision,
            action_gain=spec.actuation.gain,
            name=spec.name,
        )
        self.module_joints: Dict[str, List[int]] = {}
        self._build_structure(spec, arm)
        self._build_channels(spec)
        self.hybrids: Dict[str, HybridUnit] = {}
        self.standalone: Dict[str, HybridUnit] = {}
        self.standalone_channels: Dict[str, List[ChannelSpec]] = {}
        for level in spec.levels:
            self._build_level(level)
        for unit in spec.hybrid_units:
            self._build_hybrid_unit(unit)
        self.tactile: List[TactileSwitch] = [self._build_tactile(t) for t in spec.tactile]
        self.planner: Optional[DiscretePlanner] = None
        self.planned: List[HybridUnit] = []
        if spec.discrete is not None:
            self._build_planner(spec)

    # Assembly

    def _build_structure(self, spec: AgentSpec, arm: ArmSpec) -> None:
        root = spec.root if spec.root is not None else arm.base
        for module in spec.modules:
            lengths = [arm.joints[j].length for j in module.joints]
            angles = module.angles if module.angles is not None else [arm.joints[j].angle for j in module.joints]
            self.net.add_module(module.name, module.parent, lengths, angles)
            self.module_joints[module.name] = list(module.joints)
        self.net.add_self_pathway(root)
        for pathway in spec.pathways:
            self.net.attach_entity_pathway(
                pathway.name,
                level=pathway.level,
                root=pathway.root if pathway.root is not None else root,
                root_free=pathway.root_free,
                length_prior=pathway.length_prior,
                initial_angles=pathway.initial_angles,
            )
        for virtual in spec.virtual:
            prior = (
                None
                if virtual.prior_from is None
                else VirtualPrior(virtual.prior_from.pathway, virtual.prior_from.precision)
            )
            self.net.attach_virtual_level(
                virtual.pathway, virtual.name, virtual.parent, virtual.lengths, virtual.angles, prior
            )

    def _build_channels(self, spec: AgentSpec) -> None:
        for channel in spec.channels:
            if channel.module is None:
                raise ConfigurationError(
                    f"network channel '{channel.name}' needs a module",
                    violations=[(f"channels.{channel.name}.module", None, "required for network agents")],
                )
            self.net.add_channel(
                NetworkChannel(
                    name=channel.name,
                    pathway=channel.pathway,
                    module=channel.module,
                    domain=EXTRINSIC if channel.module == "root" else channel.domain,
                    components=tuple(channel.components),
                    precision=channel.precision,
                    order=channel.order,
                    proprioceptive=channel.proprioceptive,
                )
            )

    def _build_level(self, spec: LevelSpec) -> None:
        module = self.net.modules.get(spec.module)
        if module is None:
            raise ConfigurationError.from_reference(f"levels.{spec.name}.module", spec.module)
        block = 3 if spec.domain == EXTRINSIC else 2 * module.n_joints
        factorization = EntityFactorization(tuple(spec.pathways), block)
        intentions = [build_intention(i, factorization, spec.gain) for i in spec.intentions]
        m = len(intentions)
        if spec.causes is not None:
            causes = np.asarray(spec.causes, dtype=float)
        elif spec.hybrid is not None and spec.hybrid.prior is not None:
            causes = np.asarray(spec.hybrid.prior, dtype=float)
        elif spec.hybrid is not None:
            causes = np.full(m, 1.0 / m)
        else:
            causes = _one_hot(m)
        level = DynamicsLevel(
            module=spec.module,
            domain=spec.domain,
            pathways=tuple(spec.pathways),
            intentions=intentions,
            precision=spec.precision,
            gains=causes,
            mask=None if spec.mask is None else np.asarray(spec.mask, dtype=float),
            fields=[
                RepulsiveField(r.source, r.obstacle, r.strength, r.cutoff, r.min_distance)
                for r in spec.repulsion
            ],
            name=spec.name,
        )
        self.net.add_level(level)
        if spec.hybrid is None:
            return
        n = factorization.dim
        prior = Precision.scalar(spec.precision, n)
        posterior = self._posterior(spec.hybrid.posterior_precision, n)
        if posterior is None:
            posterior = Precision(
                np.diag(spec.precision + self.net.velocity_channel_precision(level))
            )
        hybrid = HybridUnit(
            name=spec.name,
            reduced=[
                ReducedModel(
                    intention,
                    None if i.precision_scale is None else Precision.scalar(spec.precision * i.precision_scale, n),
                )
                for intention, i in zip(intentions, spec.intentions)
            ],
            prior_precision=prior,
            posterior_precision=posterior,
            causes=causes,
            prior_causes=spec.hybrid.prior,
            window=spec.hybrid.window,
        )
        level.hybrid = hybrid
        level.gains = None
        self.hybrids[spec.name] = hybrid

    @staticmethod
    def _posterior(value, n: int) -> Optional[Precision]:
        if value is None:
            return None
        if isinstance(value, (int, float)):
            return Precision.scalar(value, n)
        return Precision.diagonal(value)

    def _build_hybrid_unit(self, spec: HybridUnitSpec) -> None:
        n = len(spec.mu)
        intentions = [
            Intention(i.name, np.asarray(i.W, dtype=float), np.asarray(i.b, dtype=float)).with_gain(i.gain or 1.0)
            for i in spec.intentions
        ]
        holder: Dict[str, HybridUnit] = {}
        channels = [
            ObservationChannel(
                name=c.name,
                likelihood=LikelihoodMap.identity(n, c.components),
                precision=Precision.scalar(c.precision, len(c.components)),
                order=c.order,
            )
            for c in spec.channels
        ]
        prior = Precision.scalar(spec.precision, n)
        base = ContinuousUnit(
            name=f"{self.name}.{spec.name}",
            belief=GeneralizedBelief(spec.mu),
            dynamics=DynamicsMap.from_intentions(intentions, lambda: holder["unit"].causes),
            dynamics_precision=prior,
            channels=channels,
        )
        posterior = self._posterior(spec.posterior_precision, n) or default_posterior_precision(
            prior,
            [
                (channel.likelihood.jacobian_x(base.belief.mu_prime, base.causes), channel.precision)
                for channel in channels
                if channel.order == 1
            ],
        )
        hybrid = HybridUnit(
            name=spec.name,
            reduced=[
                ReducedModel(
                    intention,
                    None if i.precision_scale is None else Precision.scalar(spec.precision * i.precision_scale, n),
                )
                for intention, i in zip(intentions, spec.intentions)
            ],
            prior_precision=prior,
            posterior_precision=posterior,
            prior_causes=spec.prior,
            window=spec.window,
            base=base,
        )
        holder["unit"] = hybrid
        self.hybrids[spec.name] = hybrid
        self.standalone[spec.name] = hybrid
        self.standalone_channels[spec.name] = list(spec.channels)

    def _build_tactile(self, spec) -> TactileSwitch:
        level = next(l for l in self.net.levels if l.name == spec.level)
        target = [i.name for i in level.intentions].index(spec.switch_to)
        unit = ContinuousUnit(
            name=f"{self.name}.{spec.name}",
            belief=GeneralizedBelief([0.0]),
            dynamics=DynamicsMap.zero(1),
            dynamics_precision=Precision.scalar(0.0, 1),
            channels=[
                ObservationChannel("touch", LikelihoodMap.identity(1), Precision.scalar(spec.rate, 1))
            ],
        )
        return TactileSwitch(spec.name, spec.sensor, unit, level, target, spec.threshold)

    def _build_planner(self, spec: AgentSpec) -> None:
        discrete = spec.discrete
        model = DiscreteModel(
            A=discrete.A,
            B=discrete.B,
            C=discrete.C,
            D=discrete.D,
            horizon=discrete.horizon,
            state_labels=tuple(discrete.states),
            action_labels=tuple(discrete.actions),
            unit_names=tuple(discrete.units),
            policies=[tuple(p) for p in discrete.policies or []],
        )
        self.planner = DiscretePlanner(
            model,
            evidence_precision=discrete.evidence_precision,
            emit=discrete.emit,
            use_free_energy=discrete.use_free_energy,
        )
        self.planned = [self.hybrids[name] for name in discrete.units]
        windows = {unit.window for unit in self.planned}
        if len(windows) != 1:
            raise ConfigurationError(
                f"agent '{self.name}': planned units must share one window",
                violations=[(f"agents.{self.name}.discrete.units", None, f"windows {sorted(windows)}")],
            )

    # Loop

    def tick(self, observations, dt, tick) -> AgentTick:
        net_obs = self._channel_observations(self.spec.channels, observations)
        try:
            report = self.net.tick(net_obs, dt)
            free_energy = report.free_energy
            for name, hybrid in self.standalone.items():
                step = hybrid.step(
                    self._channel_observations(self.standalone_channels[name], observations), dt
                )
                free_energy += step.free_energy
        except NumericAbortError as e:
            raise e.at_tick(tick)

        events: List[WorldEvent] = []
        for switch in self.tactile:
            touch = observations.get(switch.sensor)
            if touch is None:
                continue
            switch.unit.step({"touch": touch}, dt)
            if not switch.latched and switch.unit.belief.mu[0] > switch.threshold:
                switch.latched = True
                switch.level.set_gains(_one_hot(len(switch.level.intentions), switch.target))
                subject = f"{self.name}.{switch.level.name}:{switch.level.intentions[switch.target].name}"
                events.append(WorldEvent(tick, "switch", subject))
                logger.info(f"Agent {self.name} tick {tick}: tactile switch to {subject}")

        self._window_barrier(tick)

        rate = np.zeros(self.n_joints)
        for module, module_rate in report.action.items():
            for k, joint in enumerate(self.module_joints.get(module, [])):
                rate[joint] = module_rate[k]
        self.events.extend(events)
        return AgentTick(free_energy, self.actuator(rate, dt), events)

    def _window_barrier(self, tick: int) -> None:
        if self.planner is not None and all(unit.window_elapsed for unit in self.planned):
            evidence = [unit.take_evidence() for unit in self.planned]
            causes = self._plan(evidence, tick)
            for unit, v in zip(self.planned, causes):
                unit.install_causes(v)
        for unit in self.hybrids.values():
            if unit not in self.planned and unit.window_elapsed:
                unit.bmc_update()

    @monitor_operation("planner_step")
    def _plan(self, evidence, tick):
        return self.planner.planner_step(evidence, tick)

    def probes(self) -> Dict[str, float]:
        row: Dict[str, float] = {}
        levelled = {level.module for level in self.net.levels}
        for module in self.net.modules.values():
            for pathway, beliefs in module.beliefs.items():
                prefix = f"{self.name}.{module.name}.{pathway}"
                for k, value in enumerate(beliefs.extrinsic.mu):
                    row[f"{prefix}.ext[{k}]"] = float(value)
                for k, value in enumerate(beliefs.intrinsic.mu):
                    row[f"{prefix}.int[{k}]"] = float(value)
                if module.name in levelled:
                    for k, value in enumerate(beliefs.extrinsic.mu_prime):
                        row[f"{prefix}.ext_prime[{k}]"] = float(value)
        for level in self.net.levels:
            for k, value in enumerate(level.causes):
                row[f"{self.name}.{level.name}.v[{k}]"] = float(value)
        for name, hybrid in self.standalone.items():
            for k, value in enumerate(hybrid.base.belief.mu):
                row[f"{self.name}.{name}.mu[{k}]"] = float(value)
            for k, value in enumerate(hybrid.causes):
                row[f"{self.name}.{name}.v[{k}]"] = float(value)
        for switch in self.tactile:
            row[f"{self.name}.{switch.name}.mu[0]"] = float(switch.unit.belief.mu[0])
        for k, value in enumerate(self.actuator.action):
            row[f"{self.name}.action[{k}]"] = float(value)
        return row


def build_agent(spec: AgentSpec, scenario: ScenarioSpec) -> Agent:
    """
    Assemble an agent and collect the sensors its channels read.

    Raises:
        ConfigurationError: On structural errors the loader could not see
    """
    arm = next(a for a in scenario.world.arms if a.name == spec.arm)
    models = {model.name: model for model in scenario.sensors}
    wanted = [c.sensor_name for c in spec.channels]
    wanted += [c.sensor_name for unit in spec.hybrid_units for c in unit.channels]
    wanted += [t.sensor for t in spec.tactile]
    sensors = {name: sensor_spec(models[name], scenario.noise) for name in dict.fromkeys(wanted)}
    if spec.kind == "unit":
        return UnitAgent(spec, arm, sensors)
    return NetworkAgent(spec, arm, sensors)
