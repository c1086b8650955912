"""Three-valued outcomes shared by the condition checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class Status(str, Enum):
    HOLDS = "Holds"
    FAILS = "Fails"
    UNDETERMINED = "Undetermined"

    def __str__(self) -> str:
        return self.value


@dataclass
class ConditionStatus:
    """Outcome of one named condition with structured evidence.

    A ``Fails`` outcome must carry a witness in ``evidence``.
    """

    name: str
    status: Status
    evidence: dict[str, Any] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.status is Status.HOLDS

    @property
    def fails(self) -> bool:
        return self.status is Status.FAILS

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "status": self.status.value, "evidence": self.evidence}


def combine(statuses: list[Status]) -> Status:
    """Fails dominates, then Undetermined; an empty list holds."""
    if any(s is Status.FAILS for s in statuses):
        return Status.FAILS
    if any(s is Status.UNDETERMINED for s in statuses):
        return Status.UNDETERMINED
    return Status.HOLDS
