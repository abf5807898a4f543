"""Generative process: ground-truth arms, moving objects and noisy sensors.

The world never reads agent beliefs; agents reach it only through joint
velocities passed to ``world_step``.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from app.services.generalized import as_vector
from app.utils.exceptions import ConfigurationError, ContractViolationError
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)

DEFAULT_NOISE = {"angles": 0.01, "pose": 0.01, "object": 0.01, "touch": 0.05}
CONTACT_FRACTION = 0.05


@dataclass(frozen=True)
class MotionLaw:
    kind: str = "static"
    velocity: Optional[Tuple[float, ...]] = None
    center: Optional[Tuple[float, float]] = None
    angular_velocity: float = 0.0
    waypoints: Tuple[Tuple[float, Tuple[float, ...]], ...] = ()

    def __post_init__(self):
        if self.kind not in ("static", "linear", "circular", "scripted"):
            raise ConfigurationError(
                f"unknown motion law '{self.kind}'",
                violations=[("objects.motion.kind", None, f"unknown kind '{self.kind}'")],
            )
        if self.kind == "linear" and self.velocity is None:
            raise ConfigurationError(
                "linear motion needs a velocity",
                violations=[("objects.motion.velocity", None, "required for linear motion")],
            )
        if self.kind == "circular" and self.center is None:
            raise ConfigurationError(
                "circular motion needs a center",
                violations=[("objects.motion.center", None, "required for circular motion")],
            )
        if self.kind == "scripted" and not self.waypoints:
            raise ConfigurationError(
                "scripted motion needs waypoints",
                violations=[("objects.motion.waypoints", None, "required for scripted motion")],
            )

    def position_at(self, start: np.ndarray, tick: int, dt: float) -> np.ndarray:
        """Closed-form position ``tick`` steps after ``start``."""
        t = tick * dt
        if self.kind == "static":
            return start.copy()
        if self.kind == "linear":
            return start + as_vector(self.velocity) * t
        if self.kind == "circular":
            center = as_vector(self.center)
            offset = start - center
            radius = float(np.hypot(offset[0], offset[1]))
            angle = float(np.arctan2(offset[1], offset[0])) + self.angular_velocity * t
            return center + radius * np.array([np.cos(angle), np.sin(angle)])
        times = np.array([w[0] for w in self.waypoints], dtype=float)
        points = np.array([w[1] for w in self.waypoints], dtype=float)
        return np.array([np.interp(t, times, points[:, k]) for k in range(points.shape[1])])


@dataclass
class Joint:
    name: str
    parent: int
    length: float
    angle: float


@dataclass
class Arm:
    name: str
    base: np.ndarray
    joints: List[Joint]

    def __post_init__(self):
        self.base = as_vector(self.base, "arm base")
        for k, joint in enumerate(self.joints):
            if not -1 <= joint.parent < k:
                raise ConfigurationError(
                    f"joint '{joint.name}' of arm '{self.name}' must follow its parent",
                    violations=[(f"arms.{self.name}.joints.{k}.parent", None, "parent index out of order")],
                )
            if joint.length < 0:
                raise ConfigurationError(
                    f"joint '{joint.name}' has negative length",
                    violations=[(f"arms.{self.name}.joints.{k}.length", None, "must be >= 0")],
                )

    @property
    def angles(self) -> np.ndarray:
        return np.array([joint.angle for joint in self.joints])

    def joint_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if 0 <= name < len(self.joints):
                return int(name)
        else:
            for k, joint in enumerate(self.joints):
                if joint.name == name:
                    return k
        raise ConfigurationError.from_reference(f"arms.{self.name}.joints", str(name))

    def reach(self, joint: int) -> float:
        """Summed segment lengths from the base to the end of ``joint``."""
        total = 0.0
        k = int(joint)
        while k >= 0:
            total += self.joints[k].length
            k = self.joints[k].parent
        return total

    def forward_kinematics(self) -> np.ndarray:
        """Pose ``[x, y, psi]`` at the end of every joint's limb."""
        poses = np.zeros((len(self.joints), 3))
        for k, joint in enumerate(self.joints):
            parent = self.base if joint.parent < 0 else poses[joint.parent]
            psi = parent[2] + joint.angle
            poses[k] = (
                parent[0] + joint.length * np.cos(psi),
                parent[1] + joint.length * np.sin(psi),
                psi,
            )
        return poses


@dataclass
class Attachment:
    arm: str
    joint: int
    offset: np.ndarray


@dataclass
class WorldObject:
    name: str
    start: np.ndarray
    law: MotionLaw = field(default_factory=MotionLaw)
    position: Optional[np.ndarray] = None
    attached: Optional[Attachment] = None

    def __post_init__(self):
        self.start = as_vector(self.start, f"object {self.name} position")
        if self.position is None:
            self.position = self.start.copy()
        if self.law.kind == "circular" and self.start.size != 2:
            raise ConfigurationError(
                f"circular object '{self.name}' must be planar",
                violations=[(f"objects.{self.name}.position", None, "expected 2 coordinates")],
            )


@dataclass(frozen=True)
class GraspRule:
    """Attach ``objects`` to an arm joint once it touches ``contact_object``.

    Every finger joint must also lie within ``tolerance`` of its closed angle.
    """

    arm: str
    joint: int
    contact_object: str
    objects: Tuple[str, ...]
    fingers: Mapping[int, float] = field(default_factory=dict)
    tolerance: float = 0.2


@dataclass(frozen=True)
class SensorSpec:
    """
    One observation stream.

    ``source`` is ``angles`` (joint angles of ``arm``), ``pose`` (pose
    components at the end of ``joint``), ``object`` (object position) or
    ``touch`` (contact between ``joint`` and ``object``). ``order=1`` gives
    the finite-difference velocity of the same quantity.
    """

    name: str
    source: str
    arm: Optional[str] = None
    joints: Tuple[int, ...] = ()
    joint: Optional[int] = None
    object: Optional[str] = None
    components: Optional[Tuple[int, ...]] = None
    order: int = 0
    noise: Optional[float] = None

    @property
    def sigma(self) -> float:
        return DEFAULT_NOISE[self.source] if self.noise is None else self.noise


@dataclass
class WorldEvent:
    tick: int
    kind: str
    subject: str


class World:
    """
    Ground truth stepped on the simulation thread.

    Args:
        seed: Seed of the Philox generator used for all sensor noise
        dt: Integration step of joints and motion laws
        contact_radius: Touch distance between a joint end and an object;
            by default 5% of the arm length up to the touching joint
    """

    def __init__(self, seed: int = 0, dt: float = 0.01, contact_radius: Optional[float] = None):
        if dt <= 0:
            raise ContractViolationError(f"dt must be positive, got {dt}")
        self.seed = int(seed)
        self.dt = float(dt)
        self.contact_radius = None if contact_radius is None else float(contact_radius)
        self.rng = np.random.Generator(np.random.Philox(self.seed))
        self.arms: Dict[str, Arm] = {}
        self.objects: Dict[str, WorldObject] = {}
        self.grasp_rules: List[GraspRule] = []
        self.tick = 0
        self.events: List[WorldEvent] = []
        self._watched: Set[Tuple[str, int, str]] = set()
        self._contacts: Set[Tuple[str, int, str]] = set()
        self._previous: Optional[Dict[str, np.ndarray]] = None
        self._step_dt = self.dt

    # Layout

    def add_arm(self, name: str, base, joints: Sequence[Joint]) -> Arm:
        if name in self.arms:
            raise ConfigurationError(
                f"duplicate arm '{name}'", violations=[("arms", None, f"duplicate arm '{name}'")]
            )
        arm = Arm(name, base, [Joint(j.name, j.parent, j.length, j.angle) for j in joints])
        self.arms[name] = arm
        return arm

    def add_object(self, name: str, position, law: Optional[MotionLaw] = None) -> WorldObject:
        if name in self.objects:
            raise ConfigurationError(
                f"duplicate object '{name}'", violations=[("objects", None, f"duplicate object '{name}'")]
            )
        obj = WorldObject(name, position, law or MotionLaw())
        self.objects[name] = obj
        return obj

    def add_grasp_rule(self, rule: GraspRule) -> None:
        self._arm(rule.arm).joint_index(rule.joint)
        for name in (rule.contact_object, *rule.objects):
            self._object(name)
        self.grasp_rules.append(rule)
        self.watch_contact(rule.arm, rule.joint, rule.contact_object)

    def watch_contact(self, arm: str, joint: int, obj: str) -> None:
        self._watched.add((arm, int(joint), obj))

    def _arm(self, name: Optional[str]) -> Arm:
        if name not in self.arms:
            raise ConfigurationError.from_reference("sensor.arm", str(name))
        return self.arms[name]

    def _object(self, name: Optional[str]) -> WorldObject:
        if name not in self.objects:
            raise ConfigurationError.from_reference("sensor.object", str(name))
        return self.objects[name]

    # Geometry

    def poses(self, arm: str) -> np.ndarray:
        return self._arm(arm).forward_kinematics()

    def distance(self, arm: str, joint: int, obj: str) -> float:
        position = self._object(obj).position
        if position.size != 2:
            return float("inf")
        return float(np.linalg.norm(self.poses(arm)[joint, :2] - position))

    def contact_threshold(self, arm: str, joint: int) -> float:
        if self.contact_radius is not None:
            return self.contact_radius
        return CONTACT_FRACTION * self._arm(arm).reach(joint)

    def touching(self, arm: str, joint: int, obj: str) -> bool:
        return self.distance(arm, joint, obj) < self.contact_threshold(arm, joint)

    def attach(self, obj: str, arm: str, joint: int) -> None:
        """Fix ``obj`` in the frame of ``joint``, keeping its current pose."""
        target = self._object(obj)
        pose = self.poses(arm)[joint]
        c, s = np.cos(pose[2]), np.sin(pose[2])
        d = target.position - pose[:2]
        target.attached = Attachment(arm, joint, np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]]))
        self.events.append(WorldEvent(self.tick, "grasp", obj))
        logger.info(f"World tick {self.tick}: {obj} attached to {arm}[{joint}]")

    def release(self, obj: str) -> None:
        target = self._object(obj)
        if target.attached is None:
            return
        target.attached = None
        # Motion resumes from where the object was dropped.
        target.start = target.position.copy()
        target.law = MotionLaw()
        self.events.append(WorldEvent(self.tick, "release", obj))

    def _carry(self, obj: WorldObject) -> np.ndarray:
        link = obj.attached
        pose = self.poses(link.arm)[link.joint]
        c, s = np.cos(pose[2]), np.sin(pose[2])
        return np.array(
            [
                pose[0] + c * link.offset[0] - s * link.offset[1],
                pose[1] + s * link.offset[0] + c * link.offset[1],
            ]
        )

    # Stepping

    def _state(self) -> Dict[str, np.ndarray]:
        state = {f"arm:{name}": arm.angles for name, arm in self.arms.items()}
        state.update({f"pose:{name}": self.poses(name) for name in self.arms})
        state.update({f"object:{name}": obj.position.copy() for name, obj in self.objects.items()})
        state.update(
            {f"touch:{arm}:{joint}:{obj}": np.array([float(self.touching(arm, joint, obj))])
             for arm, joint, obj in self._watched}
        )
        return state

    def world_step(self, actions: Mapping[str, np.ndarray], dt: Optional[float] = None) -> None:
        """
        Integrate joint velocities and advance every object one tick.

        Args:
            actions: Joint velocity vector per arm; missing arms stay still
            dt: Step, the world's own when omitted
        """
        dt = self.dt if dt is None else dt
        if dt <= 0:
            raise ContractViolationError(f"dt must be positive, got {dt}")
        self._previous = self._state()
        self._step_dt = dt
        for name, velocity in actions.items():
            arm = self._arm(name)
            velocity = as_vector(velocity, f"action of {name}")
            if velocity.size != len(arm.joints):
                raise ContractViolationError(
                    f"arm '{name}' has {len(arm.joints)} joints, action has {velocity.size}"
                )
            for joint, rate in zip(arm.joints, velocity):
                joint.angle += dt * float(rate)
        self.tick += 1
        for obj in self.objects.values():
            if obj.attached is not None:
                obj.position = self._carry(obj)
            else:
                obj.position = obj.law.position_at(obj.start, self.tick, dt)
        self._update_contacts()
        self._apply_grasp_rules()

    def _update_contacts(self) -> None:
        for key in sorted(self._watched):
            now = self.touching(*key)
            if now and key not in self._contacts:
                self._contacts.add(key)
                self.events.append(WorldEvent(self.tick, "contact", f"{key[0]}[{key[1]}]:{key[2]}"))
            elif not now and key in self._contacts:
                self._contacts.discard(key)
                self.events.append(WorldEvent(self.tick, "release_contact", f"{key[0]}[{key[1]}]:{key[2]}"))

    def _apply_grasp_rules(self) -> None:
        for rule in self.grasp_rules:
            if all(self.objects[name].attached is not None for name in rule.objects):
                continue
            if not self.touching(rule.arm, rule.joint, rule.contact_object):
                continue
            angles = self.arms[rule.arm].angles
            if any(abs(angles[j] - closed) > rule.tolerance for j, closed in rule.fingers.items()):
                continue
            for name in rule.objects:
                if self.objects[name].attached is None:
                    self.attach(name, rule.arm, rule.joint)

    # Sensing

    def _true_value(self, sensor: SensorSpec, state: Dict[str, np.ndarray]) -> np.ndarray:
        if sensor.source == "angles":
            angles = state[f"arm:{sensor.arm}"]
            joints = list(sensor.joints) or list(range(angles.size))
            return angles[joints]
        if sensor.source == "pose":
            pose = state[f"pose:{sensor.arm}"][sensor.joint]
            comps = list(sensor.components or (0, 1))
            return pose[comps]
        if sensor.source == "object":
            position = state[f"object:{sensor.object}"]
            comps = list(sensor.components or range(position.size))
            return position[comps]
        if sensor.source == "touch":
            return state[f"touch:{sensor.arm}:{sensor.joint}:{sensor.object}"]
        raise ConfigurationError(
            f"unknown sensor source '{sensor.source}'",
            violations=[(f"sensors.{sensor.name}.source", None, f"unknown source '{sensor.source}'")],
        )

    def check_sensor(self, sensor: SensorSpec) -> None:
        if sensor.source in ("angles", "pose", "touch"):
            arm = self._arm(sensor.arm)
            for joint in sensor.joints:
                arm.joint_index(joint)
            if sensor.source != "angles":
                if sensor.joint is None:
                    raise ConfigurationError(
                        f"sensor '{sensor.name}' needs a joint",
                        violations=[(f"sensors.{sensor.name}.joint", None, "required")],
                    )
                arm.joint_index(sensor.joint)
        if sensor.source in ("object", "touch"):
            self._object(sensor.object)
        if sensor.source == "touch":
            self.watch_contact(sensor.arm, sensor.joint, sensor.object)
        if sensor.source not in DEFAULT_NOISE:
            raise ConfigurationError(
                f"unknown sensor source '{sensor.source}'",
                violations=[(f"sensors.{sensor.name}.source", None, f"unknown source '{sensor.source}'")],
            )

    def observe(self, sensors: Sequence[SensorSpec]) -> Dict[str, np.ndarray]:
        """
        Sample every sensor from the current ground truth.

        Returns:
            Observation vector per sensor name

        Raises:
            ConfigurationError: For sensors naming unknown arms or objects
        """
        for sensor in sensors:
            self.check_sensor(sensor)
        state = self._state()
        out: Dict[str, np.ndarray] = {}
        for sensor in sensors:
            value = self._true_value(sensor, state)
            if sensor.order == 1:
                # Contacts watched only since the last step have no history.
                if self._previous is None or (
                    sensor.source == "touch"
                    and f"touch:{sensor.arm}:{sensor.joint}:{sensor.object}" not in self._previous
                ):
                    value = np.zeros_like(value)
                else:
                    value = (value - self._true_value(sensor, self._previous)) / self._step_dt
            noisy = value + sensor.sigma * self.rng.standard_normal(value.size)
            if sensor.source == "touch" and sensor.order == 0:
                noisy = np.clip(noisy, 0.0, 1.0)
            out[sensor.name] = noisy
        return out

    def snapshot(self) -> Dict[str, float]:
        """Flat ground truth for trajectory logs."""
        row: Dict[str, float] = {}
        for name, arm in self.arms.items():
            for k, angle in enumerate(arm.angles):
                row[f"world.{name}.angle[{k}]"] = float(angle)
            for k, pose in enumerate(arm.forward_kinematics()):
                row[f"world.{name}.pose[{k}][0]"] = float(pose[0])
                row[f"world.{name}.pose[{k}][1]"] = float(pose[1])
                row[f"world.{name}.pose[{k}][2]"] = float(pose[2])
        for name, obj in self.objects.items():
            for k, value in enumerate(obj.position):
                row[f"world.{name}[{k}]"] = float(value)
        for arm, joint, obj in sorted(self._watched):
            row[f"world.touch.{arm}[{joint}].{obj}"] = float(self.touching(arm, joint, obj))
        return row


def world_step(world: World, actions: Mapping[str, np.ndarray], dt: Optional[float] = None) -> World:
    world.world_step(actions, dt)
    return world


def observe(world: World, sensors: Sequence[SensorSpec]) -> Dict[str, np.ndarray]:
    return world.observe(sensors)
