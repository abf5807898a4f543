from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import pandas as pd

from app.utils.exceptions import PlotError
from app.utils.logging import setup_logging

logger = setup_logging(app_name=__name__)

SCHEMA_LINE = "# hybrid-aif trajectory schema v1"

PathLike = Union[str, Path]


class RowBuffer:
    """Collects flat rows and writes them as one versioned CSV."""

    def __init__(self):
        self.rows: List[Dict[str, float]] = []

    def append(self, row: Dict[str, float]) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def frame(self, leading: Sequence[str] = ()) -> pd.DataFrame:
        df = pd.DataFrame.from_records(self.rows)
        if df.empty:
            return df
        first = [column for column in leading if column in df.columns]
        return df[first + [column for column in df.columns if column not in first]]


def write_table(df: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(SCHEMA_LINE + "\n")
        df.to_csv(handle, index=False, lineterminator="\n")
    logger.debug(f"Wrote {len(df)} rows to {path}")
    return path


def read_table(path: PathLike, required: Iterable[str] = ()) -> pd.DataFrame:
    """
    Read a CSV written by ``write_table``.

    Raises:
        PlotError: If the file is missing, empty, has another schema line or
            lacks a required column
    """
    path = Path(path)
    if not path.is_file():
        raise PlotError(f"no such CSV: {path}")
    with path.open(encoding="utf-8") as handle:
        first = handle.readline().rstrip("\n")
    if not first:
        raise PlotError(f"{path} is empty")
    if first != SCHEMA_LINE:
        raise PlotError(f"{path} does not start with '{SCHEMA_LINE}'")
    try:
        df = pd.read_csv(path, skiprows=1)
    except pd.errors.EmptyDataError as e:
        raise PlotError(f"{path} has no header row") from e
    if df.empty:
        raise PlotError(f"{path} has no rows", available=list(df.columns))
    missing = [column for column in required if column not in df.columns]
    if missing:
        raise PlotError(f"{path} lacks columns {missing}", available=list(df.columns))
    return df
