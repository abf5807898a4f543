"""Static SVG plots of trajectory CSVs.

Figures are built on ``matplotlib.figure.Figure`` directly so concurrent runs
never share pyplot state; the SVG id salt is fixed and the date metadata is
dropped so a CSV always renders to the same bytes.
"""

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from app.utils.csv_logging import read_table
from app.utils.exceptions import PlotError
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)


@dataclass(frozen=True)
class PlotSpec:
    name: str
    patterns: Sequence[str]
    ylabel: str
    title: str


PLOT_SPECS: Dict[str, PlotSpec] = {
    spec.name: spec
    for spec in (
        PlotSpec(
            "trajectories",
            (r"^world\.[^.]+\.angle\[\d+\]$", r"\.mu\[\d+\]$", r"\.ext\[[01]\]$", r"^world\.[^.]+\[\d+\]$"),
            "value",
            "States and beliefs",
        ),
        PlotSpec("free_energy", (r"^free_energy:",), "free energy", "Free energy"),
        PlotSpec("causes", (r"\.v\[\d+\]$",), "probability", "Hidden causes"),
        PlotSpec("velocities", (r"\.mu_prime\[\d+\]$", r"\.ext_prime\[[01]\]$"), "rate", "Belief velocities"),
        PlotSpec("angles", (r"^world\.[^.]+\.angle\[\d+\]$", r"\.action\[\d+\]$"), "rad", "Joint angles and actions"),
    )
}

_COMPONENT = re.compile(r"^(?P<prefix>.*)\[\d+\]$")


def select_columns(df: pd.DataFrame, spec: PlotSpec) -> List[str]:
    return [
        column
        for column in df.columns
        if column not in ("tick", "time") and any(re.search(p, column) for p in spec.patterns)
    ]


def _groups(columns: Sequence[str]) -> Dict[str, List[str]]:
    groups: Dict[str, List[str]] = {}
    for column in columns:
        match = _COMPONENT.match(column)
        groups.setdefault(match.group("prefix") if match else column, []).append(column)
    return groups


def _draw_causes(ax, df: pd.DataFrame, columns: Sequence[str], time: np.ndarray) -> None:
    for prefix, group in _groups(columns).items():
        for column in group:
            ax.plot(time, df[column], label=column, linewidth=1.2, drawstyle="steps-post")
        # Sanity overlay: each cause vector sums to one.
        ax.plot(time, df[group].sum(axis=1), color="black", linestyle=":", linewidth=0.8, label=f"sum {prefix}")
    ax.set_ylim(-0.05, 1.1)


def _draw_velocities(ax, df: pd.DataFrame, columns: Sequence[str], time: np.ndarray) -> None:
    for column in columns:
        ax.plot(time, df[column], label=column, linewidth=1.2)
        position = column.replace("_prime[", "[")
        if position in df.columns and len(time) > 1:
            ax.plot(time, np.gradient(df[position].to_numpy(), time), linestyle="--", linewidth=0.8, label=f"d/dt {position}")


def render(
    csv_path: Union[str, Path],
    spec_name: str,
    out_dir: Optional[Union[str, Path]] = None,
    columns: Optional[Sequence[str]] = None,
) -> Path:
    """
    Render one plot of a trajectory CSV to SVG.

    Args:
        csv_path: CSV written by a scenario run
        spec_name: One of ``PLOT_SPECS``
        out_dir: Output directory, defaults to the CSV's directory
        columns: Explicit columns replacing the plot kind's default selection

    Returns:
        Path: The written SVG

    Raises:
        PlotError: On an unknown spec, an unknown column, an empty CSV or a
            schema mismatch
    """
    from app.config.dependencies import get_settings

    spec = PLOT_SPECS.get(spec_name)
    if spec is None:
        raise PlotError(f"unknown plot spec '{spec_name}'", available=sorted(PLOT_SPECS))
    csv_path = Path(csv_path)
    df = read_table(csv_path, required=["time"])
    if columns:
        unknown = [column for column in columns if column not in df.columns]
        if unknown:
            raise PlotError(f"unknown columns {unknown}", available=list(df.columns))
        selected = list(columns)
    else:
        selected = select_columns(df, spec)
        if not selected:
            raise PlotError(f"no columns for plot spec '{spec_name}' in {csv_path}", available=list(df.columns))

    time = df["time"].to_numpy(dtype=float)
    fig = Figure(figsize=(8, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    if spec.name == "causes":
        _draw_causes(ax, df, selected, time)
    elif spec.name == "velocities":
        _draw_velocities(ax, df, selected, time)
    else:
        for column in selected:
            ax.plot(time, df[column], label=column, linewidth=1.2)
    if spec.name == "free_energy" and (df[selected] > 0).all().all():
        ax.set_yscale("log")
    ax.set_title(spec.title, fontsize=12, fontweight="bold")
    ax.set_xlabel("time [s]", fontsize=10)
    ax.set_ylabel(spec.ylabel, fontsize=10)
    if len(selected) <= 12:
        ax.legend(loc="best", fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()

    out = Path(out_dir) if out_dir is not None else csv_path.parent
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{csv_path.stem}_{spec.name}.svg"
    with matplotlib.rc_context({"svg.hashsalt": get_settings().PLOT_HASH_SALT}):
        fig.savefig(target, format="svg", metadata={"Date": None})
    logger.debug(f"Rendered {spec.name} plot of {csv_path} to {target}")
    return target
