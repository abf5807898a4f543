from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.schemas.reports import AssertionResult, EventRecord
from app.schemas.scenario import AssertionSpec
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)


@dataclass
class RunData:
    trajectory: pd.DataFrame
    events: List[EventRecord]
    planner: Optional[pd.DataFrame] = None


class CheckError(Exception):
    """A check cannot be evaluated on the recorded data."""


Check = Callable[[AssertionSpec, RunData], AssertionResult]
CHECKS: Dict[str, Check] = {}


def register(name: str):
    def decorator(func: Check) -> Check:
        CHECKS[name] = func
        return func

    return decorator


def _columns(df: pd.DataFrame, names: Sequence[str]) -> np.ndarray:
    missing = [name for name in names if name not in df.columns]
    if missing:
        raise CheckError(f"unknown columns {missing}")
    return df[list(names)].to_numpy(dtype=float)


def _reference(spec: AssertionSpec, df: pd.DataFrame) -> np.ndarray:
    if spec.b:
        return _columns(df, spec.b)
    if spec.value is not None:
        return np.broadcast_to(np.asarray(spec.value, dtype=float), (len(df), len(spec.value)))
    raise CheckError("needs either reference columns 'b' or a constant 'value'")


def _distance(spec: AssertionSpec, df: pd.DataFrame) -> np.ndarray:
    a = _columns(df, spec.a)
    b = _reference(spec, df)
    if a.shape[1] != b.shape[1]:
        raise CheckError(f"'a' has {a.shape[1]} columns, reference has {b.shape[1]}")
    return np.linalg.norm(a - b, axis=1)


def _tail(values: np.ndarray, fraction: float) -> np.ndarray:
    start = int(np.floor(len(values) * (1.0 - fraction)))
    return values[min(start, len(values) - 1):]


def _below(spec: AssertionSpec, value: float, message: str) -> AssertionResult:
    passed = bool(np.isfinite(value) and value < spec.below)
    return AssertionResult(
        name=spec.name, check=spec.check, passed=passed, value=float(value), threshold=spec.below, message=message
    )


@register("final_error")
def final_error(spec: AssertionSpec, data: RunData) -> AssertionResult:
    d = _distance(spec, data.trajectory)
    return _below(spec, d[-1], f"final distance {d[-1]:.4g}")


@register("free_energy_ratio")
def free_energy_ratio(spec: AssertionSpec, data: RunData) -> AssertionResult:
    f = _columns(data.trajectory, [f"free_energy:{spec.agent}"])[:, 0]
    if f[0] == 0:
        raise CheckError("initial free energy is zero")
    ratio = f[-1] / f[0]
    return _below(spec, ratio, f"F_end / F_0 = {ratio:.3g}")


@register("steady_error")
def steady_error(spec: AssertionSpec, data: RunData) -> AssertionResult:
    tail = _tail(_distance(spec, data.trajectory), spec.fraction)
    value = float(tail.mean() if spec.statistic == "mean" else tail.max())
    return _below(spec, value, f"{spec.statistic} error over last {spec.fraction:.0%}: {value:.4g}")


@register("steady_relative_error")
def steady_relative_error(spec: AssertionSpec, data: RunData) -> AssertionResult:
    df = data.trajectory
    a = _columns(df, spec.a)
    b = _reference(spec, df)
    scale = np.linalg.norm(b, axis=1)
    if np.any(scale == 0):
        raise CheckError("reference is zero")
    rel = _tail(np.linalg.norm(a - b, axis=1) / scale, spec.fraction)
    value = float(rel.mean() if spec.statistic == "mean" else rel.max())
    return _below(spec, value, f"{spec.statistic} relative error over last {spec.fraction:.0%}: {value:.4g}")


@register("cause_dominance")
def cause_dominance(spec: AssertionSpec, data: RunData) -> AssertionResult:
    values = _columns(data.trajectory, [spec.winner, spec.loser])
    margin = values[:, 0] - values[:, 1]
    ahead = np.flatnonzero(margin > 0)
    if ahead.size == 0:
        return AssertionResult(
            name=spec.name, check=spec.check, passed=False, value=float(margin[-1]),
            message=f"{spec.winner} never exceeds {spec.loser}",
        )
    stays = bool(np.all(margin[ahead[0]:] > 0))
    return AssertionResult(
        name=spec.name,
        check=spec.check,
        passed=stays,
        value=float(margin[-1]),
        message=(
            f"{spec.winner} leads from tick {int(data.trajectory['tick'].iloc[ahead[0]])}"
            + ("" if stays else " but falls behind later")
        ),
    )


def _matches(event: EventRecord, pattern: str) -> bool:
    kind, _, subject = pattern.partition(":")
    return event.kind == kind and (not subject or event.subject.startswith(subject))


@register("event_order")
def event_order(spec: AssertionSpec, data: RunData) -> AssertionResult:
    remaining = list(spec.events)
    for event in data.events:
        if remaining and _matches(event, remaining[0]):
            remaining.pop(0)
    passed = not remaining
    return AssertionResult(
        name=spec.name,
        check=spec.check,
        passed=passed,
        message="events in order" if passed else f"missing {remaining}",
    )


@register("distance_decreased_since_event")
def distance_decreased_since_event(spec: AssertionSpec, data: RunData) -> AssertionResult:
    event = next((e for e in data.events if _matches(e, spec.event or "")), None)
    if event is None:
        return AssertionResult(
            name=spec.name, check=spec.check, passed=False, message=f"no '{spec.event}' event"
        )
    df = data.trajectory
    d = _distance(spec, df)
    row = int(np.searchsorted(df["tick"].to_numpy(), event.tick))
    at_event = d[min(row, len(d) - 1)]
    return AssertionResult(
        name=spec.name,
        check=spec.check,
        passed=bool(d[-1] < at_event),
        value=float(d[-1]),
        threshold=float(at_event),
        message=f"distance {at_event:.4g} at tick {event.tick}, {d[-1]:.4g} at end",
    )


@register("value_within")
def value_within(spec: AssertionSpec, data: RunData) -> AssertionResult:
    value = float(_columns(data.trajectory, spec.a[:1])[-1, 0])
    tolerance = (spec.rel_tol or 0.0) * abs(spec.target)
    return AssertionResult(
        name=spec.name,
        check=spec.check,
        passed=bool(abs(value - spec.target) <= tolerance),
        value=value,
        threshold=spec.target,
        message=f"{spec.a[0]} = {value:.4g}, target {spec.target} +/- {tolerance:.3g}",
    )


@register("planner_sequence")
def planner_sequence(spec: AssertionSpec, data: RunData) -> AssertionResult:
    if data.planner is None or data.planner.empty:
        return AssertionResult(name=spec.name, check=spec.check, passed=False, message="no planner log")
    planner = data.planner
    if spec.agent is not None and "agent" in planner.columns:
        planner = planner[planner["agent"] == spec.agent]
    if planner.empty:
        return AssertionResult(name=spec.name, check=spec.check, passed=False, message=f"no planner log for {spec.agent}")
    states = planner[[c for c in planner.columns if c.startswith("state[")]].to_numpy()
    visited = [int(k) for k in states.argmax(axis=1)]
    compressed = [k for i, k in enumerate(visited) if i == 0 or k != visited[i - 1]]
    remaining = list(spec.sequence)
    for k in compressed:
        if remaining and k == remaining[0]:
            remaining.pop(0)
    return AssertionResult(
        name=spec.name,
        check=spec.check,
        passed=not remaining,
        message=f"visited {compressed}",
    )


@register("min_distance")
def min_distance(spec: AssertionSpec, data: RunData) -> AssertionResult:
    value = float(_distance(spec, data.trajectory).min())
    return AssertionResult(
        name=spec.name,
        check=spec.check,
        passed=bool(value > spec.above),
        value=value,
        threshold=spec.above,
        message=f"closest approach {value:.4g}",
    )


def evaluate(specs: Sequence[AssertionSpec], data: RunData) -> List[AssertionResult]:
    """Run every named check; checks that cannot be evaluated fail."""
    results = []
    for spec in specs:
        try:
            result = CHECKS[spec.check](spec, data)
        except (CheckError, TypeError) as e:
            result = AssertionResult(name=spec.name, check=spec.check, passed=False, message=str(e))
        if not result.passed:
            logger.warning(f"Assertion {spec.name} failed: {result.message}")
        results.append(result)
    return results
