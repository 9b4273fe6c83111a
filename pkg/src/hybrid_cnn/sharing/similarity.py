"""
Layer similarity matrices and the recurrence regulariser.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from hybrid_cnn.core import Tensor
from hybrid_cnn.core import functional as F
from hybrid_cnn.errors import UsageError
from hybrid_cnn.sharing.templates import CoefficientMatrix, SharingGroup

logger = logging.getLogger(__name__)

__all__ = [
    "LayerSimilarityMatrix",
    "compute_lsm",
    "lsm_tensor",
    "offdiag_mean",
    "recurrence_regularized_loss",
]


@dataclass
class LayerSimilarityMatrix:
    """Absolute cosine similarities between the coefficient rows of a group.

    Attributes:
        values: L x L matrix, symmetric with unit diagonal and entries in [0, 1].
        signs: L x L matrix of sign(<a_i, a_j>) in {-1, 0, +1}.
        group_id: Group the matrix was computed for.
    """

    values: np.ndarray
    signs: np.ndarray
    group_id: str = ""

    @property
    def num_layers(self) -> int:
        return self.values.shape[0]

    def offdiag_mean(self) -> float:
        return offdiag_mean(self.values)

    def offdiag_min(self) -> float:
        n = self.num_layers
        if n < 2:
            return 1.0
        return float(self.values[~np.eye(n, dtype=bool)].min())


def offdiag_mean(values: np.ndarray) -> float:
    """Mean of the off-diagonal entries (1.0 for a single layer)."""
    n = values.shape[0]
    if n < 2:
        return 1.0
    return float(values[~np.eye(n, dtype=bool)].mean())


def compute_lsm(
    coefficients: Union[CoefficientMatrix, np.ndarray], group_id: str = ""
) -> LayerSimilarityMatrix:
    """S[i, j] = |<a_i, a_j>| / (|a_i| |a_j|) for all coefficient rows.

    Raises:
        UsageError: If a row has zero norm.
    """
    rows = coefficients.as_array() if isinstance(coefficients, CoefficientMatrix) else np.asarray(
        coefficients, dtype=np.float64
    )
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        zero_rows = np.flatnonzero(norms == 0.0).tolist()
        raise UsageError(f"coefficient rows {zero_rows} are zero; similarity is undefined")
    gram = rows @ rows.T
    cosine = gram / np.outer(norms, norms)
    values = np.clip(np.abs(cosine), 0.0, 1.0)
    # Symmetrise and pin the diagonal so rounding never breaks the invariants.
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, 1.0)
    return LayerSimilarityMatrix(values=values, signs=np.sign(gram), group_id=group_id)


def lsm_tensor(group: SharingGroup) -> Tensor:
    """The LSM of a group as a tape node, so gradients reach the coefficients."""
    return F.abs_cosine_similarity(group.coefficients.values)


def recurrence_regularized_loss(
    task_loss: Tensor, groups: Sequence[SharingGroup], lambda_r: float
) -> Tensor:
    """task_loss - lambda_r * sum over groups of sum_{i,j} S[i, j].

    Args:
        task_loss: Scalar loss.
        groups: Sharing groups whose LSMs are pushed towards 1.
        lambda_r: Non-negative regularisation strength; 0 returns `task_loss`.
    """
    if lambda_r < 0:
        raise UsageError(f"lambda_r must be non-negative, got {lambda_r}")
    if lambda_r == 0 or not groups:
        return task_loss
    loss = task_loss
    for group in groups:
        similarity_sum = F.sum_all(lsm_tensor(group))
        loss = F.add(loss, F.scale(similarity_sum, -lambda_r))
    return loss
