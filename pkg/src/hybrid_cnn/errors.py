"""
Exception hierarchy shared by every subpackage.

The CLI maps these onto exit codes: validation-type errors exit with 1,
everything else with 2.
"""

from typing import Any, Dict, List, Optional

__all__ = [
    "HybridCNNError",
    "DimensionError",
    "StateError",
    "UsageError",
    "NonFiniteError",
    "GenerationError",
    "CheckpointError",
    "ConfigValidationError",
]


class HybridCNNError(Exception):
    """Base class for all errors raised by hybrid_cnn."""


class DimensionError(HybridCNNError, ValueError):
    """Tensor shapes do not fit together."""


class StateError(HybridCNNError, RuntimeError):
    """An object is used in a state it does not support yet."""


class UsageError(HybridCNNError, ValueError):
    """A documented precondition was violated by the caller."""


class NonFiniteError(HybridCNNError, FloatingPointError):
    """A NaN or Inf appeared in a forward/backward pass or a loss value."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class GenerationError(HybridCNNError, RuntimeError):
    """Dataset generation could not produce a valid example."""


class CheckpointError(HybridCNNError, ValueError):
    """A checkpoint file is corrupt or inconsistent."""


class ConfigValidationError(HybridCNNError, ValueError):
    """A run configuration failed validation; lists every violation."""

    def __init__(self, violations: List[str]):
        self.violations: List[str] = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"Invalid configuration ({len(self.violations)} problems):\n{lines}")
