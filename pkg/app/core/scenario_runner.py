"""Closed-loop execution of a loaded scenario and its artifacts."""

import time
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import yaml

from app.config.dependencies import get_metrics_manager, get_settings
from app.core.agents import Agent, build_agent, build_world
from app.core.assertions import RunData, evaluate
from app.core.scenario_loader import LoadedScenario, load
from app.schemas.reports import EventRecord, RunSummary
from app.services.world import World, WorldEvent
from app.utils.csv_logging import RowBuffer, write_table
from app.utils.exceptions import ConfigurationError, NumericAbortError, PlotError
from app.utils.logging import setup_logging
from app.utils.plotting import PLOT_SPECS, render

logger = setup_logging(app_name=__name__)

EXIT_PASSED = 0
EXIT_FAILED = 1


def prepare_output(out_dir: Union[str, Path], overwrite: bool = False) -> Path:
    """
    Create the run directory, refusing to reuse a non-empty one.

    Raises:
        ConfigurationError: If the directory holds files and ``overwrite`` is off
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise ConfigurationError(
            f"output directory {out} is not empty",
            violations=[("--out", None, "pass --overwrite to replace existing artifacts")],
            error_type="OutputExists",
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def planner_frame(agents: List[Agent]) -> pd.DataFrame:
    rows = []
    for agent in agents:
        planner = getattr(agent, "planner", None)
        if planner is None:
            continue
        model = planner.model
        for record in planner.log:
            row: Dict[str, object] = {"agent": agent.name, "tau": record.tau, "tick": record.tick}
            for label, p in zip(model.state_labels, record.current):
                row[f"state[{label}]"] = float(p)
            for j, p in enumerate(record.pi):
                row[f"policy[{j}]"] = float(p)
            for j, g in enumerate(record.G):
                row[f"G[{j}]"] = float(g)
            for label, p in zip(model.action_labels, record.action):
                row[f"action[{label}]"] = float(p)
            for unit, causes in record.causes.items():
                for k, p in enumerate(causes):
                    row[f"cause:{unit}[{k}]"] = float(p)
            rows.append(row)
    return pd.DataFrame.from_records(rows)


class ScenarioRunner:
    """
    Steps a world and its agents in lockstep and records the run.

    Every tick all agents sample their sensors from the same world state,
    then each agent updates, then the world integrates all joint velocities.

    Args:
        loaded: Validated scenario
        seed: Overrides the scenario seed
    """

    def __init__(self, loaded: LoadedScenario, seed: Optional[int] = None):
        self.loaded = loaded
        self.scenario = loaded.spec
        self.seed = self.scenario.seed if seed is None else int(seed)
        self.world: World = build_world(self.scenario, self.seed)
        self.agents: List[Agent] = [build_agent(spec, self.scenario) for spec in self.scenario.agents]
        self.rows = RowBuffer()
        self.agent_events: List[WorldEvent] = []
        self.free_energy: Dict[str, float] = {}
        self.tick = 0

    def _record(self) -> None:
        row: Dict[str, float] = {"tick": self.tick, "time": self.tick * self.scenario.dt}
        for agent in self.agents:
            row[f"free_energy:{agent.name}"] = self.free_energy.get(agent.name, np.nan)
        for agent in self.agents:
            row.update(agent.probes())
        row.update(self.world.snapshot())
        self.rows.append(row)

    def step(self) -> None:
        self.tick += 1
        observations = {agent.name: self.world.observe(agent.sensor_list()) for agent in self.agents}
        velocities: Dict[str, np.ndarray] = {}
        for agent in self.agents:
            result = agent.tick(observations[agent.name], self.scenario.dt, self.tick)
            self.free_energy[agent.name] = result.free_energy
            self.agent_events.extend(result.events)
            if agent.arm in velocities:
                velocities[agent.arm] = velocities[agent.arm] + result.velocities
            else:
                velocities[agent.arm] = result.velocities
        self.world.world_step(velocities, self.scenario.dt)
        if self.tick % self.scenario.log_every == 0 or self.tick == self.scenario.ticks:
            self._record()

    def events(self) -> List[EventRecord]:
        # Agent events precede the world step of the same tick.
        merged = sorted(self.agent_events + self.world.events, key=lambda e: e.tick)
        return [EventRecord(tick=e.tick, kind=e.kind, subject=e.subject) for e in merged]

    def run(self) -> RunSummary:
        scenario = self.scenario
        summary = RunSummary(scenario=scenario.name, seed=self.seed, ticks=scenario.ticks, dt=scenario.dt)
        logger.info(f"Running {scenario.name} (seed {self.seed}, {scenario.ticks} ticks)")
        try:
            while self.tick < scenario.ticks:
                self.step()
        except NumericAbortError as e:
            e.log_error(logger)
            summary.status = "aborted"
            summary.exit_code = e.exit_code
            summary.error = e.get_error_dict()
        summary.ticks = self.tick
        summary.free_energy = {name: float(value) for name, value in self.free_energy.items()}
        summary.events = self.events()
        if summary.status != "aborted":
            data = RunData(self.trajectory(), summary.events, planner_frame(self.agents))
            summary.assertions = evaluate(scenario.assertions, data)
            if not all(result.passed for result in summary.assertions):
                summary.status = "failed"
                summary.exit_code = EXIT_FAILED
        return summary

    def trajectory(self) -> pd.DataFrame:
        return self.rows.frame(leading=["tick", "time"] + [f"free_energy:{a.name}" for a in self.agents])


def write_artifacts(runner: ScenarioRunner, summary: RunSummary, out: Path, plots: bool = False) -> None:
    artifacts: Dict[str, str] = {}
    trajectory = runner.trajectory()
    if not trajectory.empty:
        artifacts["trajectory"] = str(write_table(trajectory, out / "trajectory.csv"))
    planner = planner_frame(runner.agents)
    if not planner.empty:
        artifacts["planner"] = str(write_table(planner, out / "planner.csv"))
    events = pd.DataFrame([e.model_dump() for e in summary.events], columns=["tick", "kind", "subject"])
    artifacts["events"] = str(write_table(events, out / "events.csv"))
    if plots and "trajectory" in artifacts:
        for name in runner.scenario.plots:
            if name in PLOT_SPECS:
                try:
                    artifacts[f"plot:{name}"] = str(render(artifacts["trajectory"], name, out))
                except PlotError as e:
                    logger.warning(f"Skipping {name} plot for {runner.scenario.name}: {e}")
    if get_settings().ENABLE_METRICS:
        metrics_path = out / "metrics.prom"
        get_metrics_manager().write_textfile(metrics_path)
        artifacts["metrics"] = str(metrics_path)
    summary.artifacts = artifacts
    with (out / "summary.yaml").open("w", encoding="utf-8") as handle:
        yaml.safe_dump(summary.model_dump(mode="json"), handle, sort_keys=False)


def run_scenario(
    name_or_path: Union[str, Path],
    seed: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
    plots: bool = False,
    overwrite: bool = False,
) -> RunSummary:
    """
    Load, run and record one scenario.

    Artifacts land in ``<out_dir>/<scenario name>``; ``out_dir`` defaults to
    the ``OUTPUT_DIR`` setting.

    Raises:
        ConfigurationError: On invalid scenarios or an occupied output directory
    """
    loaded = load(name_or_path)
    base = Path(out_dir) if out_dir is not None else Path(get_settings().OUTPUT_DIR)
    out = prepare_output(base / loaded.spec.name, overwrite)
    metrics = get_metrics_manager()
    start = time.perf_counter()
    runner = ScenarioRunner(loaded, seed)
    summary = runner.run()
    summary.wall_time = time.perf_counter() - start
    metrics.increment_run_count(loaded.spec.name, summary.status)
    metrics.increment_tick_count(loaded.spec.name, summary.ticks)
    metrics.observe_run_duration(loaded.spec.name, summary.wall_time)
    if summary.status == "aborted":
        metrics.increment_error_count("NumericAbortError")
    write_artifacts(runner, summary, out, plots)
    logger.info(
        f"Finished {loaded.spec.name}: {summary.status} in {summary.wall_time:.2f}s "
        f"({sum(r.passed for r in summary.assertions)}/{len(summary.assertions)} assertions)"
    )
    return summary
