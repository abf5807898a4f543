import numpy as np
import pandas as pd
import pytest
import yaml
from pandas import testing as pdt

from app.core.assertions import RunData, evaluate
from app.core.scenario_loader import BUNDLED_DIR, bundled_names, load
from app.core.scenario_runner import ScenarioRunner, planner_frame
from app.schemas.reports import EventRecord
from app.schemas.scenario import AssertionSpec
from app.utils.exceptions import ConfigurationError


def write_scenario(tmp_path, data, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def bundled(name):
    return yaml.safe_load((BUNDLED_DIR / f"{name}.yaml").read_text(encoding="utf-8"))


@pytest.mark.parametrize("name", bundled_names())
def test_bundled_scenarios_validate(name):
    loaded = load(name)
    assert loaded.spec.name == name


def test_missing_scenario():
    with pytest.raises(ConfigurationError) as info:
        load("no_such_scenario")
    assert info.value.error_type == "MissingFile"
    assert info.value.exit_code == 2


def test_dangling_sensor_reference_is_listed(tmp_path):
    data = bundled("reaching_1dof")
    data["agents"][0]["channels"][0]["sensor"] = "camera"
    with pytest.raises(ConfigurationError) as info:
        load(write_scenario(tmp_path, data))
    assert info.value.error_type == "ReferenceError"
    assert any("camera" in text for _, _, text in info.value.violations)
    fields = [field for field, _, _ in info.value.violations]
    assert any(field.startswith("agents.0.channels.0") for field in fields)


def test_schema_violation_carries_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("name: broken\nticks: -5\nagents: []\n", encoding="utf-8")
    with pytest.raises(ConfigurationError) as info:
        load(path)
    lines = {field: line for field, line, _ in info.value.violations}
    assert lines.get("ticks") == 2


def test_unparseable_yaml(tmp_path):
    path = tmp_path / "garbled.yaml"
    path.write_text("name: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigurationError) as info:
        load(path)
    assert info.value.error_type == "ParseError"


def test_likelihood_columns_must_sum_to_one(tmp_path):
    data = bundled("pick_and_place")
    data["agents"][0]["discrete"]["A"][0][1][0] = 0.88
    with pytest.raises(ConfigurationError) as info:
        load(write_scenario(tmp_path, data))
    messages = [text for _, _, text in info.value.violations]
    assert any("column 0 sums to 0.9" in text for text in messages)


def test_same_seed_gives_identical_trajectories():
    first = ScenarioRunner(load("reaching_1dof"))
    second = ScenarioRunner(load("reaching_1dof"))
    for runner in (first, second):
        while runner.tick < 300:
            runner.step()
    pdt.assert_frame_equal(first.trajectory(), second.trajectory())
    other = ScenarioRunner(load("reaching_1dof"), seed=1)
    while other.tick < 300:
        other.step()
    assert not first.trajectory().equals(other.trajectory())


def test_planner_runs_are_reproducible():
    runners = [ScenarioRunner(load("pick_and_place")) for _ in range(2)]
    for runner in runners:
        while runner.tick < 300:
            runner.step()
    first, second = runners
    pdt.assert_frame_equal(first.trajectory(), second.trajectory())
    pdt.assert_frame_equal(planner_frame(first.agents), planner_frame(second.agents))
    assert [e.model_dump() for e in first.events()] == [e.model_dump() for e in second.events()]


def test_degree_fields_become_radians():
    spec = load("reaching_1dof").spec
    agent = spec.agents[0]
    assert spec.world.arms[0].joints[0].angle == pytest.approx(np.radians(-40.0))
    assert agent.mu == pytest.approx([np.radians(-40.0)])
    assert agent.dynamics.target == pytest.approx([np.radians(120.0)])
    first = spec.assertions[0]
    assert first.value == pytest.approx([np.radians(120.0)])
    assert first.below == pytest.approx(np.radians(1.0))
    assert load("tracking_1dof").spec.world.objects[0].position == pytest.approx([np.pi / 3])


def test_angle_given_twice_is_rejected(tmp_path):
    data = bundled("reaching_1dof")
    data["world"]["arms"][0]["joints"][0]["angle"] = 0.1
    with pytest.raises(ConfigurationError) as info:
        load(write_scenario(tmp_path, data))
    assert info.value.error_type == "SchemaViolation"
    assert any("angle_deg" in text for _, _, text in info.value.violations)


ONE_JOINT = {"reaching_1dof", "tracking_1dof"}


@pytest.mark.parametrize(
    "name",
    [name if name in ONE_JOINT else pytest.param(name, marks=pytest.mark.slow) for name in bundled_names()],
)
def test_bundled_scenarios_pass(name):
    summary = ScenarioRunner(load(name)).run()
    assert summary.status == "passed", [r.message for r in summary.assertions if not r.passed]
    assert summary.exit_code == 0
    assert summary.ticks == load(name).spec.ticks


def synthetic_run() -> RunData:
    trajectory = pd.DataFrame(
        {
            "tick": [1, 2, 3, 4],
            "time": [0.01, 0.02, 0.03, 0.04],
            "free_energy:agent": [10.0, 5.0, 1.0, 0.05],
            "x": [1.0, 0.5, 0.2, 0.01],
            "v[0]": [0.5, 0.4, 0.7, 0.9],
            "v[1]": [0.5, 0.6, 0.3, 0.1],
        }
    )
    events = [EventRecord(tick=2, kind="contact", subject="arm[2]:obj"), EventRecord(tick=3, kind="grasp", subject="obj")]
    return RunData(trajectory, events)


def check(**fields) -> AssertionSpec:
    return AssertionSpec(name=fields.pop("name", "check"), **fields)


def test_assertion_checks_on_recorded_data():
    data = synthetic_run()
    results = evaluate(
        [
            check(check="final_error", a=["x"], value=[0.0], below=0.02),
            check(check="free_energy_ratio", agent="agent", below=0.01),
            check(check="steady_error", a=["x"], value=[0.0], below=0.25, fraction=0.5, statistic="max"),
            check(check="cause_dominance", winner="v[0]", loser="v[1]"),
            check(check="event_order", events=["contact:arm[2]", "grasp"]),
            check(check="distance_decreased_since_event", a=["x"], value=[0.0], event="contact"),
            check(check="value_within", a=["x"], target=0.0105, rel_tol=0.1),
            check(check="min_distance", a=["x"], value=[-1.0], above=0.5),
        ],
        data,
    )
    assert [r.passed for r in results] == [True] * 8
    assert results[1].value == pytest.approx(0.005)


def test_failing_and_unevaluable_checks():
    data = synthetic_run()
    results = evaluate(
        [
            check(check="final_error", a=["x"], value=[1.0], below=0.5),
            check(check="cause_dominance", winner="v[1]", loser="v[0]"),
            check(check="event_order", events=["grasp", "contact"]),
            check(check="final_error", a=["missing"], value=[0.0], below=1.0),
            check(check="planner_sequence", sequence=[0, 1]),
        ],
        data,
    )
    assert not any(r.passed for r in results)
    assert "missing" in results[3].message
    assert results[4].message == "no planner log"
