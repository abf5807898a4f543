from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from pydantic import ValidationError

from app.config.dependencies import get_settings
from app.schemas.scenario import AgentSpec, ScenarioSpec
from app.services.discrete import DiscreteModel
from app.utils.exceptions import ConfigurationError, Violation
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)

BUNDLED_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"

LineMap = Dict[Tuple[Any, ...], int]


@dataclass
class LoadedScenario:
    spec: ScenarioSpec
    source: str
    lines: LineMap = field(default_factory=dict)

    def line(self, *path) -> Optional[int]:
        for size in range(len(path), -1, -1):
            found = self.lines.get(tuple(path[:size]))
            if found is not None:
                return found
        return None


def line_map(text: str) -> LineMap:
    """Map every key path of a YAML document to its 1-based line."""
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    lines: LineMap = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                child = path + (key.value,)
                walk(value, child)
                lines[child] = key.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for index, value in enumerate(node.value):
                walk(value, path + (index,))

    if root is not None:
        walk(root, ())
    return lines


def bundled_names() -> List[str]:
    names = {path.stem for path in BUNDLED_DIR.glob("*.yaml")}
    extra = get_settings().SCENARIO_DIR
    if extra and Path(extra).is_dir():
        names.update(path.stem for path in Path(extra).glob("*.yaml"))
    return sorted(names)


def resolve_path(name_or_path: Union[str, Path]) -> Path:
    """
    Find a scenario file by path or by bundled name.

    Raises:
        ConfigurationError: If neither a file nor a known name matches
    """
    candidate = Path(name_or_path)
    if candidate.is_file():
        return candidate
    stem = candidate.stem if candidate.suffix in (".yaml", ".yml") else str(name_or_path)
    search = []
    extra = get_settings().SCENARIO_DIR
    if extra:
        search.append(Path(extra))
    search.append(BUNDLED_DIR)
    for directory in search:
        for suffix in (".yaml", ".yml"):
            path = directory / f"{stem}{suffix}"
            if path.is_file():
                return path
    raise ConfigurationError.from_missing_file(str(name_or_path))


def load(name_or_path: Union[str, Path]) -> LoadedScenario:
    """
    Parse and validate a scenario.

    Args:
        name_or_path: Scenario file path or bundled scenario name

    Returns:
        LoadedScenario: Validated scenario with its source line map

    Raises:
        ConfigurationError: Listing every schema, reference and simplex violation
    """
    path = resolve_path(name_or_path)
    source = str(path)
    try:
        text = path.read_text(encoding="utf-8")
        data = yaml.safe_load(text)
        lines = line_map(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigurationError(
            f"{source}: not valid YAML",
            violations=[("<document>", line, str(getattr(e, "problem", e)))],
            error_type="ParseError",
            error_location=source,
            original_error=e,
        ) from e
    if not isinstance(data, dict):
        raise ConfigurationError(
            f"{source}: scenario must be a mapping",
            violations=[("<document>", 1, "expected key-value sections")],
            error_location=source,
        )
    try:
        spec = ScenarioSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError.from_validation_error(e, source, lines) from e

    loaded = LoadedScenario(spec, source, lines)
    violations = check_references(loaded)
    if violations:
        raise ConfigurationError(
            f"{source}: {len(violations)} violation(s)",
            violations=violations,
            error_type="ReferenceError",
            error_location=source,
        )
    logger.debug(f"Loaded scenario {spec.name} from {source}")
    return loaded


def check_references(loaded: LoadedScenario) -> List[Violation]:
    """Cross-reference, shape and simplex checks that the schema cannot express."""
    spec = loaded.spec
    out: List[Violation] = []

    def bad(path: Tuple[Any, ...], message: str) -> None:
        out.append((".".join(str(p) for p in path), loaded.line(*path), message))

    def unique(items, path):
        seen = set()
        for index, item in enumerate(items):
            if item.name in seen:
                bad(path + (index, "name"), f"duplicate name '{item.name}'")
            seen.add(item.name)

    unique(spec.world.arms, ("world", "arms"))
    unique(spec.world.objects, ("world", "objects"))
    unique(spec.sensors, ("sensors",))
    unique(spec.agents, ("agents",))

    arms = {arm.name: arm for arm in spec.world.arms}
    objects = {obj.name for obj in spec.world.objects}
    sensors = {sensor.name: sensor for sensor in spec.sensors}

    for index, arm in enumerate(spec.world.arms):
        for k, joint in enumerate(arm.joints):
            parent = k - 1 if joint.parent is None else joint.parent
            if not -1 <= parent < k:
                bad(("world", "arms", index, "joints", k, "parent"), "parent must be an earlier joint or -1")

    for index, sensor in enumerate(spec.sensors):
        path = ("sensors", index)
        if sensor.arm is not None:
            if sensor.arm not in arms:
                bad(path + ("arm",), f"unknown arm '{sensor.arm}'")
            else:
                n = len(arms[sensor.arm].joints)
                for j in sensor.joints + ([sensor.joint] if sensor.joint is not None else []):
                    if not 0 <= j < n:
                        bad(path + ("joint",), f"joint {j} outside arm '{sensor.arm}'")
        if sensor.object is not None and sensor.object not in objects:
            bad(path + ("object",), f"unknown object '{sensor.object}'")

    for index, rule in enumerate(spec.world.grasp):
        path = ("world", "grasp", index)
        if rule.arm not in arms:
            bad(path + ("arm",), f"unknown arm '{rule.arm}'")
        for name in [rule.contact_object] + rule.objects:
            if name not in objects:
                bad(path + ("objects",), f"unknown object '{name}'")

    for index, agent in enumerate(spec.agents):
        path = ("agents", index)
        if agent.arm not in arms:
            bad(path + ("arm",), f"unknown arm '{agent.arm}'")
            continue
        n_joints = len(arms[agent.arm].joints)
        for k, channel in enumerate(agent.channels):
            if channel.sensor_name not in sensors:
                bad(path + ("channels", k, "sensor"), f"unknown sensor '{channel.sensor_name}'")
        if agent.kind == "unit":
            _check_unit_agent(agent, n_joints, path, bad)
        else:
            _check_network_agent(agent, n_joints, sensors, path, bad)
        if agent.actuation.velocities is not None and len(agent.actuation.velocities) != n_joints:
            bad(path + ("actuation", "velocities"), f"expected {n_joints} joint velocities")

    return out


def _check_unit_agent(agent: AgentSpec, n_joints: int, path, bad) -> None:
    dim = len(agent.mu)
    joints = agent.joints if agent.joints is not None else list(range(dim))
    if len(joints) != dim or any(not 0 <= j < n_joints for j in joints):
        bad(path + ("joints",), f"unit state of size {dim} must map onto arm joints")
    n_causes = len(agent.causes or [])
    for k, channel in enumerate(agent.channels):
        size = n_causes if channel.kind == "cause" else dim
        if any(not 0 <= c < size for c in channel.components):
            bad(path + ("channels", k, "components"), f"components outside a {channel.kind} of size {size}")
    dynamics = agent.dynamics
    if dynamics.kind == "attractor" and len(dynamics.target) != dim:
        bad(path + ("dynamics", "target"), f"target must have {dim} values")
    if dynamics.kind == "cause_attractor" and n_causes != dim:
        bad(path + ("causes",), f"cause attractor needs {dim} causes")


def _check_network_agent(agent: AgentSpec, n_joints: int, sensors, path, bad) -> None:
    modules: Dict[str, int] = {}
    claimed = set()
    for k, module in enumerate(agent.modules):
        where = path + ("modules", k)
        if module.name in modules or module.name == "root":
            bad(where + ("name",), f"duplicate or reserved module '{module.name}'")
        if module.parent is not None and module.parent not in modules:
            bad(where + ("parent",), f"unknown parent module '{module.parent}'")
        for j in module.joints:
            if not 0 <= j < n_joints:
                bad(where + ("joints",), f"joint {j} outside arm")
            elif j in claimed:
                bad(where + ("joints",), f"joint {j} claimed by two modules")
            claimed.add(j)
        if module.angles is not None and len(module.angles) != len(module.joints):
            bad(where + ("angles",), "one initial angle per joint")
        modules[module.name] = len(module.joints)

    pathways = {"self": None}
    for k, pathway in enumerate(agent.pathways):
        where = path + ("pathways", k)
        if pathway.name in pathways:
            bad(where + ("name",), f"duplicate pathway '{pathway.name}'")
        if pathway.level is not None and pathway.level != "root" and pathway.level not in modules:
            bad(where + ("level",), f"unknown level '{pathway.level}'")
        for name in pathway.initial_angles:
            if name not in modules:
                bad(where + ("initial_angles", name), f"unknown module '{name}'")
        pathways[pathway.name] = pathway

    virtual = {}
    for k, spec in enumerate(agent.virtual):
        where = path + ("virtual", k)
        if spec.pathway == "self":
            bad(where + ("pathway",), "virtual levels cannot extend the self pathway")
        elif spec.pathway not in pathways:
            bad(where + ("pathway",), f"unknown pathway '{spec.pathway}'")
        if spec.parent not in modules:
            bad(where + ("parent",), f"unknown parent module '{spec.parent}'")
        if len(spec.lengths) != len(spec.angles):
            bad(where + ("angles",), "one angle per virtual limb")
        if spec.prior_from is not None and spec.prior_from.pathway not in pathways:
            bad(where + ("prior_from", "pathway"), f"unknown pathway '{spec.prior_from.pathway}'")
        virtual[spec.name] = len(spec.lengths)

    all_modules = {**modules, **virtual}
    for k, channel in enumerate(agent.channels):
        where = path + ("channels", k)
        if channel.pathway not in pathways:
            bad(where + ("pathway",), f"unknown pathway '{channel.pathway}'")
        if channel.module != "root" and channel.module not in all_modules:
            bad(where + ("module",), f"unknown module '{channel.module}'")
        if channel.proprioceptive and channel.pathway != "self":
            bad(where + ("proprioceptive",), "proprioception belongs to the self pathway")

    hybrid_names: Dict[str, int] = {}
    levels = {}
    for k, level in enumerate(agent.levels):
        where = path + ("levels", k)
        if level.module not in all_modules:
            bad(where + ("module",), f"unknown module '{level.module}'")
        for name in level.pathways:
            if name not in pathways:
                bad(where + ("pathways",), f"unknown pathway '{name}'")
        block = 3 if level.domain == "extrinsic" else 2 * all_modules.get(level.module, 0)
        for m, intention in enumerate(level.intentions):
            iwhere = where + ("intentions", m)
            for t, target in enumerate(intention.targets):
                for name in [target.pathway, *target.from_]:
                    if name not in level.pathways:
                        bad(iwhere + ("targets", t), f"pathway '{name}' not in level pathways")
                if any(not 0 <= c < block for c in target.components):
                    bad(iwhere + ("targets", t, "components"), f"components outside a block of {block}")
            if intention.W is not None:
                size = block * len(level.pathways)
                if len(intention.b) != size or any(len(row) != size for row in intention.W):
                    bad(iwhere + ("W",), f"explicit intention must be {size}x{size}")
        if level.mask is not None and len(level.mask) != block * len(level.pathways):
            bad(where + ("mask",), "mask needs one entry per level component")
        for r, repulsion in enumerate(level.repulsion):
            for name in (repulsion.source, repulsion.obstacle):
                if name not in level.pathways:
                    bad(where + ("repulsion", r), f"pathway '{name}' not in level pathways")
        if level.hybrid is not None:
            hybrid_names[level.name] = len(level.intentions)
            if level.hybrid.prior is not None and len(level.hybrid.prior) != len(level.intentions):
                bad(where + ("hybrid", "prior"), "prior needs one entry per intention")
        levels[level.name] = level

    for k, unit in enumerate(agent.hybrid_units):
        where = path + ("hybrid_units", k)
        hybrid_names[unit.name] = len(unit.intentions)
        for c, channel in enumerate(unit.channels):
            if channel.sensor_name not in sensors:
                bad(where + ("channels", c, "sensor"), f"unknown sensor '{channel.sensor_name}'")
            if any(not 0 <= comp < len(unit.mu) for comp in channel.components):
                bad(where + ("channels", c, "components"), "components outside the unit state")
        for m, intention in enumerate(unit.intentions):
            if intention.targets:
                bad(where + ("intentions", m), "standalone hybrid units take explicit W/b intentions")
            elif intention.W is not None and len(intention.b) != len(unit.mu):
                bad(where + ("intentions", m, "b"), f"expected {len(unit.mu)} values")

    for k, tactile in enumerate(agent.tactile):
        where = path + ("tactile", k)
        if tactile.sensor not in sensors:
            bad(where + ("sensor",), f"unknown sensor '{tactile.sensor}'")
        if tactile.level not in levels:
            bad(where + ("level",), f"unknown level '{tactile.level}'")
        elif tactile.switch_to not in [i.name for i in levels[tactile.level].intentions]:
            bad(where + ("switch_to",), f"unknown intention '{tactile.switch_to}'")

    if agent.discrete is not None:
        discrete = agent.discrete
        where = path + ("discrete",)
        for u, name in enumerate(discrete.units):
            if name not in hybrid_names:
                bad(where + ("units", u), f"'{name}' is not a hybrid level or unit")
            elif u < len(discrete.A) and len(discrete.A[u]) != hybrid_names[name]:
                bad(where + ("A", u), f"A needs one row per intention of '{name}'")
        try:
            DiscreteModel(
                A=discrete.A,
                B=discrete.B,
                C=discrete.C,
                D=discrete.D,
                horizon=discrete.horizon,
                policies=[tuple(p) for p in discrete.policies or []],
            )
        except ConfigurationError as e:
            for field_name, _, message in e.violations:
                parts = tuple(int(p) if p.isdigit() else p for p in field_name.replace("[", ".").replace("]", "").split("."))
                bad(path + parts, message)
        except ValueError as e:
            bad(where, str(e))
