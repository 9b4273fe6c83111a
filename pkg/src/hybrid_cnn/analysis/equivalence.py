"""
Functional comparison of a network with its tied/folded counterpart.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from hybrid_cnn.errors import DimensionError
from hybrid_cnn.models import Network
from hybrid_cnn.tasks import f1_score, predict_mask

logger = logging.getLogger(__name__)

__all__ = ["FoldReport", "verify_fold_equivalence"]


@dataclass
class FoldReport:
    """Outcome of running both networks on the same probe inputs.

    Attributes:
        max_output_diff: Largest absolute logit difference.
        metric_delta: tied metric minus original metric (None without labels).
        original_metric: F1 of the original network on the probe labels.
        tied_metric: F1 of the tied network on the probe labels.
        num_probes: Number of probe examples.
    """

    max_output_diff: float
    metric_delta: Optional[float] = None
    original_metric: Optional[float] = None
    tied_metric: Optional[float] = None
    num_probes: int = 0

    def as_dict(self) -> Dict[str, Any]:
        return {
            "num_probes": self.num_probes,
            "max_output_diff": self.max_output_diff,
            "original_f1": self.original_metric,
            "tied_f1": self.tied_metric,
            "metric_delta": self.metric_delta,
        }


def _check_same_shapes(original: Network, tied: Network) -> None:
    if [layer.to_dict() for layer in original.spec.layers] != [layer.to_dict() for layer in tied.spec.layers]:
        raise DimensionError(
            f"networks '{original.spec.name}' and '{tied.spec.name}' have different layer lists"
        )
    tied_params = {p.name: p.tensor.shape for p in tied.named_parameters()}
    for p in original.named_parameters():
        if tied_params.get(p.name) != p.tensor.shape:
            raise DimensionError(
                f"tensor '{p.name}' has shape {p.tensor.shape} in the original network "
                f"but {tied_params.get(p.name)} in the tied one"
            )


def verify_fold_equivalence(
    original: Network,
    tied: Network,
    probe_inputs: np.ndarray,
    probe_labels: Optional[np.ndarray] = None,
    batch_size: int = 32,
    threads: int = 1,
) -> FoldReport:
    """Run both networks on the probe inputs and compare them.

    Networks with running statistics run in eval mode; untrained ones are
    normalised with the statistics of each probe batch.

    Args:
        original: The network before tying.
        tied: The tied (and possibly sign-folded) network.
        probe_inputs: Inputs of shape (N, C, H, W).
        probe_labels: Optional binary targets shaped like the logits; when
            given, the F1 delta is reported too.

    Raises:
        DimensionError: The two networks do not have the same shapes.
    """
    _check_same_shapes(original, tied)
    a = original.infer(probe_inputs, batch_size=batch_size, threads=threads)
    b = tied.infer(probe_inputs, batch_size=batch_size, threads=threads)
    report = FoldReport(
        max_output_diff=float(np.max(np.abs(a - b))) if a.size else 0.0,
        num_probes=int(a.shape[0]),
    )
    if probe_labels is not None:
        report.original_metric = f1_score(predict_mask(a), probe_labels)
        report.tied_metric = f1_score(predict_mask(b), probe_labels)
        report.metric_delta = report.tied_metric - report.original_metric
    logger.info(
        f"Fold check on {report.num_probes} probes: max |diff| = {report.max_output_diff:.3e}, "
        f"F1 delta = {report.metric_delta}"
    )
    return report
