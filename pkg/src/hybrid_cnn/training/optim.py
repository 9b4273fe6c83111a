"""
First-order optimisers with coupled weight decay.

Weight decay is added to the gradient as lambda * w; coefficient tensors can
be excluded from it.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hybrid_cnn.errors import ConfigValidationError, DimensionError

logger = logging.getLogger(__name__)

__all__ = [
    "OptimizerKind",
    "OptimizerConfig",
    "OptimizerState",
    "sgd_nesterov_step",
    "adam_step",
    "Optimizer",
]


class OptimizerKind(Enum):
    SGD_NESTEROV = "sgd-nesterov"
    ADAM = "adam"


@dataclass
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.ADAM
    lr: float = 0.01
    momentum: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_excludes_coefficients: bool = True

    def __post_init__(self) -> None:
        self.kind = OptimizerKind(self.kind)
        self.betas = tuple(self.betas)

    def violations(self) -> List[str]:
        problems = []
        if not self.lr > 0:
            problems.append(f"optimizer.lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"optimizer.momentum must be in [0, 1), got {self.momentum}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            problems.append(f"optimizer.betas must be two values in [0, 1), got {list(self.betas)}")
        if not self.eps > 0:
            problems.append(f"optimizer.eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            problems.append(f"optimizer.weight_decay must be >= 0, got {self.weight_decay}")
        return problems

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ConfigValidationError(problems)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "lr": self.lr,
            "momentum": self.momentum,
            "betas": list(self.betas),
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "decay_excludes_coefficients": self.decay_excludes_coefficients,
        }


@dataclass
class OptimizerState:
    """Step counter and per-parameter moment buffers, keyed by parameter name."""

    step: int = 0
    buffers: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    def buffer(self, name: str, kind: str, like: np.ndarray) -> np.ndarray:
        slot = self.buffers.setdefault(name, {})
        if kind not in slot:
            slot[kind] = np.zeros_like(like)
        return slot[kind]

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """Flat view for checkpoints: 'optim.<kind>.<param>' -> array."""
        return {
            f"optim.{kind}.{name}": value.copy()
            for name, slot in sorted(self.buffers.items())
            for kind, value in sorted(slot.items())
        }

    @classmethod
    def from_arrays(cls, step: int, arrays: Dict[str, np.ndarray]) -> "OptimizerState":
        state = cls(step=step)
        for key, value in arrays.items():
            if not key.startswith("optim."):
                continue
            _, kind, name = key.split(".", 2)
            state.buffers.setdefault(name, {})[kind] = np.array(value, dtype=np.float64)
        return state


def _decayed(param, grad: np.ndarray, cfg: OptimizerConfig) -> np.ndarray:
    if param.tensor.shape != grad.shape:
        raise DimensionError(
            f"gradient of '{param.name}' has shape {grad.shape}, parameter has {param.tensor.shape}"
        )
    if cfg.weight_decay == 0.0 or (param.is_coefficient and cfg.decay_excludes_coefficients):
        return grad
    return grad + cfg.weight_decay * param.tensor.data


def sgd_nesterov_step(
    params: Sequence, grads: Sequence[np.ndarray], state: OptimizerState, cfg: OptimizerConfig, lr: Optional[float] = None
) -> None:
    """v <- mu*v + g ; w <- w - lr*(g + mu*v), in place.

    Args:
        params: `NamedParameter`s (name, tensor, is_coefficient).
        grads: One gradient per parameter.
        lr: Learning rate override (e.g. from a schedule).
    """
    lr = cfg.lr if lr is None else lr
    state.step += 1
    for param, grad in zip(params, grads):
        g = _decayed(param, grad, cfg)
        v = state.buffer(param.name, "momentum", g)
        v *= cfg.momentum
        v += g
        param.tensor.data -= lr * (g + cfg.momentum * v)


def adam_step(
    params: Sequence, grads: Sequence[np.ndarray], state: OptimizerState, cfg: OptimizerConfig, lr: Optional[float] = None
) -> None:
    """Bias-corrected Adam update, in place."""
    lr = cfg.lr if lr is None else lr
    beta1, beta2 = cfg.betas
    state.step += 1
    t = state.step
    for param, grad in zip(params, grads):
        g = _decayed(param, grad, cfg)
        m = state.buffer(param.name, "m", g)
        v = state.buffer(param.name, "v", g)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        param.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


class Optimizer:
    """Applies the configured update to parameters using their `.grad`."""

    def __init__(self, params: Sequence, cfg: OptimizerConfig, state: Optional[OptimizerState] = None):
        cfg.validate()
        self.params = list(params)
        self.cfg = cfg
        self.state = state or OptimizerState()
        self._step_fn = adam_step if cfg.kind is OptimizerKind.ADAM else sgd_nesterov_step

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def step(self, lr: Optional[float] = None) -> None:
        # Parameters that did not take part in the forward pass get a zero gradient.
        grads = [
            p.tensor.grad if p.tensor.grad is not None else np.zeros_like(p.tensor.data) for p in self.params
        ]
        self._step_fn(self.params, grads, self.state, self.cfg, lr)
