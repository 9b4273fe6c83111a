"""
Run configuration loaded from a single JSON document.
"""

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from hybrid_cnn.errors import ConfigValidationError
from hybrid_cnn.sharing import ForwardStrategy, InitScheme, SparseDistribution
from hybrid_cnn.tasks import CurriculumSpec
from hybrid_cnn.training.optim import OptimizerConfig, OptimizerKind
from hybrid_cnn.training.schedule import Schedule, ScheduleKind

logger = logging.getLogger(__name__)

__all__ = ["RunConfig", "BUILTIN_MODELS"]

BUILTIN_MODELS = ("scnn", "cnn")

_OPTIMIZER_KEYS = {f.name for f in fields(OptimizerConfig)}
_SCHEDULE_KEYS = {f.name for f in fields(Schedule)}


@dataclass
class RunConfig:
    """Everything a curriculum training run needs.

    Attributes:
        model: "scnn", "cnn" or the path of an architecture JSON file.
        templates: Templates of the SCNN body group (None = one per layer).
        seed: Seed for initialisation, validation split and shuffling.
        data_seed: Seed used when phase datasets are generated.
        generate_data: Generate missing phase files in `data_dir` instead of failing.
        lsm_pgm: Also write one PGM heatmap per epoch and group.
    """

    model: str = "scnn"
    depth: int = 8
    width: int = 16
    templates: Optional[int] = None
    init_scheme: InitScheme = InitScheme.ORTHOGONAL
    sparse_distribution: SparseDistribution = SparseDistribution.NORMAL
    strategy: ForwardStrategy = ForwardStrategy.GENERATED_WEIGHTS
    grid: int = 32
    obstacle_p: float = 0.1
    phases: int = 5
    examples_per_phase: int = 500
    epochs_per_phase: int = 10
    batch_size: int = 32
    val_fraction: float = 0.1
    lambda_r: float = 0.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: Schedule = field(default_factory=Schedule)
    seed: int = 0
    data_seed: int = 0
    data_dir: str = "data"
    out_dir: str = "runs/default"
    generate_data: bool = False
    lsm_pgm: bool = False
    threads: int = 1

    @property
    def curriculum(self) -> CurriculumSpec:
        return CurriculumSpec(
            phases=self.phases,
            examples_per_phase=self.examples_per_phase,
            epochs_per_phase=self.epochs_per_phase,
            grid=self.grid,
            obstacle_p=self.obstacle_p,
        )

    def phase_data_path(self, phase: int) -> Path:
        return Path(self.data_dir) / f"phase{phase}.spth"

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        """Build and validate a config; every problem is reported at once.

        Raises:
            ConfigValidationError: Unknown keys, wrong types or out-of-range values.
        """
        problems: List[str] = []
        if not isinstance(d, dict):
            raise ConfigValidationError([f"config must be a JSON object, got {type(d).__name__}"])
        known = {f.name for f in fields(cls)}
        problems.extend(f"unknown key '{k}'" for k in sorted(set(d) - known))

        kwargs: Dict[str, Any] = {}
        for f in fields(cls):
            if f.name not in d or f.name in ("optimizer", "schedule"):
                continue
            kwargs[f.name] = d[f.name]

        for key, enum_cls in (
            ("init_scheme", InitScheme),
            ("sparse_distribution", SparseDistribution),
            ("strategy", ForwardStrategy),
        ):
            if key in kwargs:
                try:
                    kwargs[key] = enum_cls(kwargs[key])
                except ValueError:
                    allowed = [e.value for e in enum_cls]
                    problems.append(f"{key} must be one of {allowed}, got {kwargs.pop(key)!r}")

        opt = d.get("optimizer", {})
        if not isinstance(opt, dict):
            problems.append("optimizer must be an object")
            opt = {}
        problems.extend(f"unknown key 'optimizer.{k}'" for k in sorted(set(opt) - _OPTIMIZER_KEYS))
        opt = {k: v for k, v in opt.items() if k in _OPTIMIZER_KEYS}
        if "kind" in opt:
            try:
                opt["kind"] = OptimizerKind(opt["kind"])
            except ValueError:
                problems.append(f"optimizer.kind must be one of {[k.value for k in OptimizerKind]}, got {opt.pop('kind')!r}")
        try:
            kwargs["optimizer"] = OptimizerConfig(**opt)
        except (TypeError, ValueError) as e:
            problems.append(f"optimizer: {e}")

        sched = d.get("schedule", {})
        if not isinstance(sched, dict):
            problems.append("schedule must be an object")
            sched = {}
        problems.extend(f"unknown key 'schedule.{k}'" for k in sorted(set(sched) - _SCHEDULE_KEYS))
        sched = {k: v for k, v in sched.items() if k in _SCHEDULE_KEYS}
        if "kind" in sched:
            try:
                sched["kind"] = ScheduleKind(sched["kind"])
            except ValueError:
                problems.append(f"schedule.kind must be one of {[k.value for k in ScheduleKind]}, got {sched.pop('kind')!r}")
        try:
            kwargs["schedule"] = Schedule(**sched)
        except (TypeError, ValueError) as e:
            problems.append(f"schedule: {e}")

        config = None
        try:
            config = cls(**kwargs)
        except TypeError as e:
            problems.append(str(e))
        if config is not None:
            problems.extend(config.violations())
        if problems:
            raise ConfigValidationError(problems)
        return config

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigValidationError([f"{path} is not valid JSON: {e}"]) from e
        return cls.from_dict(data)

    def violations(self) -> List[str]:
        problems: List[str] = []

        def check_int(name: str, minimum: int) -> None:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                problems.append(f"{name} must be an integer, got {value!r}")
            elif value < minimum:
                problems.append(f"{name} must be >= {minimum}, got {value}")

        def check_number(name: str) -> bool:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                problems.append(f"{name} must be a number, got {value!r}")
                return False
            return True

        if not isinstance(self.model, str) or not self.model:
            problems.append(f"model must be 'scnn', 'cnn' or a spec path, got {self.model!r}")
        elif self.model not in BUILTIN_MODELS and not Path(self.model).is_file():
            problems.append(f"model '{self.model}' is neither a built-in model nor an existing spec file")
        check_int("depth", 1)
        check_int("width", 1)
        if self.templates is not None:
            check_int("templates", 1)
        check_int("grid", 2)
        check_int("phases", 1)
        check_int("examples_per_phase", 2)
        check_int("epochs_per_phase", 0)
        check_int("batch_size", 1)
        check_int("seed", 0)
        check_int("data_seed", 0)
        check_int("threads", 1)
        if check_number("obstacle_p") and not 0.0 <= self.obstacle_p < 1.0:
            problems.append(f"obstacle_p must be in [0, 1), got {self.obstacle_p}")
        if check_number("val_fraction") and not 0.0 < self.val_fraction < 1.0:
            problems.append(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if check_number("lambda_r") and self.lambda_r < 0:
            problems.append(f"lambda_r must be >= 0, got {self.lambda_r}")
        for name in ("data_dir", "out_dir"):
            if not isinstance(getattr(self, name), str):
                problems.append(f"{name} must be a path string")
        for name in ("generate_data", "lsm_pgm"):
            if not isinstance(getattr(self, name), bool):
                problems.append(f"{name} must be true or false")
        if isinstance(self.optimizer, OptimizerConfig):
            problems.extend(self.optimizer.violations())
        if isinstance(self.schedule, Schedule):
            problems.extend(self.schedule.violations())
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigValidationError(problems)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("optimizer", "schedule"):
                value = value.to_dict()
            elif hasattr(value, "value"):
                value = value.value
            d[f.name] = value
        return d

    def replace(self, **changes: Any) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)
