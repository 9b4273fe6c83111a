"""
Learning-rate schedules indexed by (0-based) epoch.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List

__all__ = ["ScheduleKind", "Schedule"]


class ScheduleKind(Enum):
    FIXED = "fixed"
    STEP_DECAY = "step-decay"


@dataclass
class Schedule:
    """Fixed rate, or division by `factor` at every milestone epoch reached."""

    kind: ScheduleKind = ScheduleKind.FIXED
    milestones: List[int] = field(default_factory=list)
    factor: float = 5.0

    def __post_init__(self) -> None:
        self.kind = ScheduleKind(self.kind)
        self.milestones = [int(m) for m in self.milestones]

    @classmethod
    def step_decay(cls, milestones=(60, 120, 160), factor: float = 5.0) -> "Schedule":
        return cls(ScheduleKind.STEP_DECAY, list(milestones), factor)

    def violations(self) -> List[str]:
        problems = []
        if any(b <= a for a, b in zip(self.milestones[:-1], self.milestones[1:])):
            problems.append(f"schedule.milestones must be strictly increasing, got {self.milestones}")
        if any(m < 0 for m in self.milestones):
            problems.append(f"schedule.milestones must be >= 0, got {self.milestones}")
        if self.kind is ScheduleKind.STEP_DECAY and not self.factor > 0:
            problems.append(f"schedule.factor must be > 0, got {self.factor}")
        return problems

    def lr_at(self, epoch: int, base_lr: float) -> float:
        if self.kind is ScheduleKind.FIXED:
            return base_lr
        passed = sum(1 for m in self.milestones if epoch >= m)
        return base_lr / self.factor**passed

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "milestones": list(self.milestones), "factor": self.factor}
