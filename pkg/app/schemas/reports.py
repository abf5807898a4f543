from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class AssertionResult(BaseModel):
    name: str
    check: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    message: str = ""


class EventRecord(BaseModel):
    tick: int
    kind: str
    subject: str


class RunSummary(BaseModel):
    scenario: str
    seed: int
    ticks: int
    dt: float
    wall_time: float = 0.0
    status: Literal["passed", "failed", "aborted"] = "passed"
    exit_code: int = 0
    free_energy: Dict[str, float] = Field(default_factory=dict)
    events: List[EventRecord] = Field(default_factory=list)
    assertions: List[AssertionResult] = Field(default_factory=list)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    error: Optional[Dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        return self.status == "passed"
