import math
from typing import Any, ClassVar, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator


def _radians(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_radians(item) for item in value]
    if isinstance(value, dict):
        return {key: _radians(item) for key, item in value.items()}
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return math.radians(value)
    return value


class StrictModel(BaseModel):
    """
    Base of every scenario model.

    Fields named in ``degree_fields`` also accept a ``<field>_deg`` key whose
    value is converted to radians before validation.
    """

    model_config = {"extra": "forbid", "populate_by_name": True}

    degree_fields: ClassVar[Tuple[str, ...]] = ()

    @model_validator(mode="before")
    @classmethod
    def degrees_to_radians(cls, data):
        if not cls.degree_fields or not isinstance(data, dict):
            return data
        data = dict(data)
        for name in cls.degree_fields:
            key = f"{name}_deg"
            if key not in data:
                continue
            if name in data:
                raise ValueError(f"give either {name} or {key}, not both")
            data[name] = _radians(data.pop(key))
        return data


# World


class JointSpec(StrictModel):
    degree_fields = ("angle",)

    name: Optional[str] = None
    parent: Optional[int] = None
    length: float = Field(..., ge=0.0)
    angle: float = 0.0


class ArmSpec(StrictModel):
    name: str
    base: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    joints: List[JointSpec] = Field(..., min_length=1)

    @field_validator("base")
    @classmethod
    def base_is_pose(cls, value):
        if len(value) != 3:
            raise ValueError("base must be [x, y, orientation]")
        return value


class MotionSpec(StrictModel):
    kind: Literal["static", "linear", "circular", "scripted"] = "static"
    velocity: Optional[List[float]] = None
    center: Optional[List[float]] = None
    angular_velocity: float = 0.0
    waypoints: List[Tuple[float, List[float]]] = Field(default_factory=list)

    @model_validator(mode="after")
    def law_is_complete(self):
        if self.kind == "linear" and self.velocity is None:
            raise ValueError("linear motion needs a velocity")
        if self.kind == "circular" and (self.center is None or len(self.center) != 2):
            raise ValueError("circular motion needs a 2-D center")
        if self.kind == "scripted" and not self.waypoints:
            raise ValueError("scripted motion needs waypoints")
        return self


class ObjectSpec(StrictModel):
    degree_fields = ("position",)

    name: str
    position: List[float] = Field(..., min_length=1)
    motion: MotionSpec = Field(default_factory=MotionSpec)


class GraspSpec(StrictModel):
    arm: str
    joint: int
    contact_object: str
    objects: List[str] = Field(default_factory=list)
    fingers: Dict[int, float] = Field(default_factory=dict)
    tolerance: float = Field(0.2, gt=0.0)


class WorldSpec(StrictModel):
    arms: List[ArmSpec] = Field(default_factory=list)
    objects: List[ObjectSpec] = Field(default_factory=list)
    grasp: List[GraspSpec] = Field(default_factory=list)


class NoiseSpec(StrictModel):
    angles: float = Field(0.01, ge=0.0)
    pose: float = Field(0.01, ge=0.0)
    object: float = Field(0.01, ge=0.0)
    touch: float = Field(0.05, ge=0.0)


class SensorModel(StrictModel):
    name: str
    source: Literal["angles", "pose", "object", "touch"]
    arm: Optional[str] = None
    joints: List[int] = Field(default_factory=list)
    joint: Optional[int] = None
    object: Optional[str] = None
    components: Optional[List[int]] = None
    order: Literal[0, 1] = 0
    noise: Optional[float] = Field(None, ge=0.0)

    @model_validator(mode="after")
    def source_fields(self):
        if self.source in ("angles", "pose", "touch") and self.arm is None:
            raise ValueError(f"{self.source} sensors need an arm")
        if self.source in ("pose", "touch") and self.joint is None:
            raise ValueError(f"{self.source} sensors need a joint")
        if self.source in ("object", "touch") and self.object is None:
            raise ValueError(f"{self.source} sensors need an object")
        return self


# Intentions and dynamics


class BlockTargetSpec(StrictModel):
    pathway: str
    components: List[int] = Field(..., min_length=1)
    from_: Dict[str, float] = Field(default_factory=dict, alias="from")
    bias: Optional[List[float]] = None

    @model_validator(mode="after")
    def bias_matches(self):
        if self.bias is not None and len(self.bias) != len(self.components):
            raise ValueError("bias needs one value per component")
        return self


class IntentionSpec(StrictModel):
    name: str
    targets: List[BlockTargetSpec] = Field(default_factory=list)
    W: Optional[List[List[float]]] = None
    b: Optional[List[float]] = None
    gain: Optional[float] = Field(None, gt=0.0)
    precision_scale: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def one_form(self):
        if (self.W is None) != (self.b is None):
            raise ValueError("explicit intentions need both W and b")
        if self.W is not None and self.targets:
            raise ValueError("use either targets or an explicit W/b")
        return self


class RepulsionSpec(StrictModel):
    source: str
    obstacle: str
    strength: float = Field(..., gt=0.0)
    cutoff: float = Field(..., gt=0.0)
    min_distance: float = Field(0.05, gt=0.0)


class HybridSpec(StrictModel):
    window: int = Field(30, ge=1)
    prior: Optional[List[float]] = None
    posterior_precision: Optional[Union[float, List[float]]] = None


class LevelSpec(StrictModel):
    name: str
    module: str
    domain: Literal["extrinsic", "intrinsic"] = "extrinsic"
    pathways: List[str] = Field(..., min_length=1)
    precision: float = Field(1.0, gt=0.0)
    gain: float = Field(1.0, gt=0.0)
    intentions: List[IntentionSpec] = Field(..., min_length=1)
    causes: Optional[List[float]] = None
    mask: Optional[List[float]] = None
    repulsion: List[RepulsionSpec] = Field(default_factory=list)
    hybrid: Optional[HybridSpec] = None

    @model_validator(mode="after")
    def causes_fit(self):
        if self.causes is not None and len(self.causes) != len(self.intentions):
            raise ValueError("causes need one value per intention")
        return self


class UnitDynamicsSpec(StrictModel):
    degree_fields = ("target",)

    kind: Literal["zero", "attractor", "cause_attractor"] = "zero"
    target: Optional[List[float]] = None
    gain: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def target_given(self):
        if self.kind == "attractor" and self.target is None:
            raise ValueError("attractor dynamics need a target")
        return self


# Agents


class ChannelSpec(StrictModel):
    name: str
    sensor: Optional[str] = None
    pathway: str = "self"
    module: Optional[str] = None
    domain: Literal["extrinsic", "intrinsic"] = "intrinsic"
    kind: Literal["state", "cause"] = "state"
    components: List[int] = Field(..., min_length=1)
    precision: float = Field(..., gt=0.0)
    order: Literal[0, 1] = 0
    proprioceptive: bool = False

    @property
    def sensor_name(self) -> str:
        return self.sensor or self.name


class ModuleSpec(StrictModel):
    degree_fields = ("angles",)

    name: str
    parent: Optional[str] = None
    joints: List[int] = Field(..., min_length=1)
    angles: Optional[List[float]] = None


class PathwaySpec(StrictModel):
    degree_fields = ("initial_angles",)

    name: str
    level: Optional[str] = None
    root: Optional[List[float]] = None
    root_free: bool = False
    length_prior: float = Field(1.0, ge=0.0)
    initial_angles: Dict[str, List[float]] = Field(default_factory=dict)


class VirtualPriorSpec(StrictModel):
    pathway: str
    precision: float = Field(..., gt=0.0)


class VirtualSpec(StrictModel):
    degree_fields = ("angles",)

    pathway: str
    name: str
    parent: str
    lengths: List[float] = Field(..., min_length=1)
    angles: List[float] = Field(..., min_length=1)
    prior_from: Optional[VirtualPriorSpec] = None


class ActuationSpec(StrictModel):
    mode: Literal["integrated", "reflex", "open_loop"] = "integrated"
    gain: float = Field(1.0, ge=0.0)
    velocities: Optional[List[float]] = None

    @model_validator(mode="after")
    def open_loop_script(self):
        if self.mode == "open_loop" and self.velocities is None:
            raise ValueError("open_loop actuation needs joint velocities")
        return self


class TactileSpec(StrictModel):
    name: str
    sensor: str
    rate: float = Field(10.0, gt=0.0)
    threshold: float = 0.5
    level: str
    switch_to: str


class HybridUnitSpec(StrictModel):
    name: str
    mu: List[float] = Field(..., min_length=1)
    precision: float = Field(1.0, gt=0.0)
    intentions: List[IntentionSpec] = Field(..., min_length=1)
    channels: List[ChannelSpec] = Field(default_factory=list)
    window: int = Field(30, ge=1)
    prior: Optional[List[float]] = None
    posterior_precision: Optional[Union[float, List[float]]] = None


class DiscreteSpec(StrictModel):
    states: List[str] = Field(..., min_length=1)
    actions: List[str] = Field(..., min_length=1)
    units: List[str] = Field(..., min_length=1)
    A: List[List[List[float]]]
    B: List[List[List[float]]]
    C: List[Union[List[float], List[List[float]]]]
    D: List[float]
    horizon: int = Field(..., ge=1)
    policies: Optional[List[List[int]]] = None
    evidence_precision: Optional[List[float]] = None
    emit: Literal["current", "next"] = "current"
    use_free_energy: bool = False

    @model_validator(mode="after")
    def counts_match(self):
        if len(self.A) != len(self.units):
            raise ValueError("one A matrix per unit is required")
        if len(self.B) != len(self.actions):
            raise ValueError("one B matrix per action is required")
        if len(self.D) != len(self.states):
            raise ValueError("D needs one entry per state")
        return self


class AgentSpec(StrictModel):
    degree_fields = ("mu",)

    name: str
    kind: Literal["unit", "network"]
    arm: str
    actuation: ActuationSpec = Field(default_factory=ActuationSpec)
    channels: List[ChannelSpec] = Field(default_factory=list)

    # unit agents
    mu: Optional[List[float]] = None
    causes: Optional[List[float]] = None
    dynamics: UnitDynamicsSpec = Field(default_factory=UnitDynamicsSpec)
    dynamics_precision: float = Field(1.0, gt=0.0)
    joints: Optional[List[int]] = None

    # network agents
    root: Optional[List[float]] = None
    link_precision: float = Field(1.0, gt=0.0)
    default_dynamics_precision: float = Field(1.0, gt=0.0)
    modules: List[ModuleSpec] = Field(default_factory=list)
    pathways: List[PathwaySpec] = Field(default_factory=list)
    virtual: List[VirtualSpec] = Field(default_factory=list)
    levels: List[LevelSpec] = Field(default_factory=list)
    hybrid_units: List[HybridUnitSpec] = Field(default_factory=list)
    tactile: List[TactileSpec] = Field(default_factory=list)
    discrete: Optional[DiscreteSpec] = None

    @model_validator(mode="after")
    def kind_fields(self):
        if self.kind == "unit" and self.mu is None:
            raise ValueError("unit agents need an initial belief mu")
        if self.kind == "network" and not self.modules:
            raise ValueError("network agents need at least one module")
        return self


class AssertionSpec(StrictModel):
    degree_fields = ("value", "below", "target")

    name: str
    check: Literal[
        "final_error",
        "free_energy_ratio",
        "steady_error",
        "steady_relative_error",
        "cause_dominance",
        "event_order",
        "distance_decreased_since_event",
        "value_within",
        "planner_sequence",
        "min_distance",
    ]
    a: List[str] = Field(default_factory=list)
    b: List[str] = Field(default_factory=list)
    value: Optional[List[float]] = None
    below: Optional[float] = None
    above: Optional[float] = None
    fraction: float = Field(0.25, gt=0.0, le=1.0)
    statistic: Literal["mean", "max"] = "mean"
    agent: Optional[str] = None
    winner: Optional[str] = None
    loser: Optional[str] = None
    events: List[str] = Field(default_factory=list)
    event: Optional[str] = None
    target: Optional[float] = None
    rel_tol: Optional[float] = None
    sequence: List[int] = Field(default_factory=list)


class ScenarioSpec(StrictModel):
    name: str
    description: str = ""
    dt: float = Field(0.01, gt=0.0)
    ticks: int = Field(..., ge=1)
    seed: int = 0
    contact_radius: Optional[float] = Field(None, gt=0.0)
    log_every: int = Field(1, ge=1)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    world: WorldSpec = Field(default_factory=WorldSpec)
    sensors: List[SensorModel] = Field(default_factory=list)
    agents: List[AgentSpec] = Field(..., min_length=1)
    assertions: List[AssertionSpec] = Field(default_factory=list)
    plots: List[str] = Field(default_factory=lambda: ["trajectories", "free_energy"])
