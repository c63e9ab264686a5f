"""Shared mechanism contracts: lifecycle interface and outcome record."""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Callable

from ..environment import SandboxEnvironment

__all__ = ["MtdOutcome", "MechanismContext", "Mechanism",
           "STATUS_MITIGATED", "STATUS_NOOP", "STATUS_FAILED"]

STATUS_MITIGATED = "mitigated"
STATUS_NOOP = "no-op"
STATUS_FAILED = "failed"


@dataclass
class MtdOutcome:
    """One completed mechanism run. `mitigated` requires at least one
    nonzero metric; `end >= start` always."""

    mechanism: str
    start: float
    end: float
    status: str
    metrics: dict[str, float | int | str] = field(default_factory=dict)

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"outcome end {self.end} before start {self.start}")
        if self.status == STATUS_MITIGATED:
            if not any(isinstance(v, (int, float)) and v for v in self.metrics.values()):
                raise ValueError("mitigated outcome needs a nonzero metric")

    def to_dict(self) -> dict:
        return {
            "kind": "outcome",
            "mechanism": self.mechanism,
            "start": self.start,
            "end": self.end,
            "status": self.status,
            "metrics": dict(sorted(self.metrics.items())),
        }


@dataclass
class MechanismContext:
    """Everything a mechanism may touch besides the environment."""

    now: float
    alarm_behavior: str | None = None
    journal: Callable[[dict], None] = lambda line: None


class Mechanism(abc.ABC):
    """Single-flight unit of defense driven by the enforcement loop.

    start() runs at deployment time; step() runs each enforcement tick while
    not done; finish() must return the outcome exactly once.
    """

    id: str = "?"

    @abc.abstractmethod
    def start(self, env: SandboxEnvironment, ctx: MechanismContext) -> None: ...

    def step(self, env: SandboxEnvironment, now: float) -> None:
        return None

    @abc.abstractmethod
    def done(self, env: SandboxEnvironment, now: float) -> bool: ...

    @abc.abstractmethod
    def finish(self, env: SandboxEnvironment, now: float) -> MtdOutcome: ...
