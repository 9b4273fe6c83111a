"""
Hard sharing extracted from trained coefficients.

Layers of a sharing group whose coefficient rows are (almost) collinear are
tied: they are clustered greedily in layer order and each member's row is
replaced by sign * alpha(representative).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hybrid_cnn.core import BN_EPS
from hybrid_cnn.errors import UsageError
from hybrid_cnn.sharing import LayerSimilarityMatrix, SharingGroup, compute_lsm

logger = logging.getLogger(__name__)

__all__ = ["TieAssignment", "assign_ties", "tie_layers", "tie_network"]


@dataclass
class TieAssignment:
    """Cluster membership of the layers of one sharing group.

    Layers are identified by their row in the group's coefficient matrix.

    Attributes:
        group_id: Group the assignment belongs to.
        representative: Layer -> representative layer of its cluster. A
            representative maps to itself.
        sign: Layer -> +1 or -1 relative to its representative.
        tau: Similarity threshold used for clustering.
        norm_ratio: Layer -> |alpha(layer)| / |alpha(representative)| before tying.
    """

    group_id: str
    representative: Dict[int, int]
    sign: Dict[int, int]
    tau: float
    norm_ratio: Dict[int, float] = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.representative)

    @property
    def representatives(self) -> List[int]:
        """Representatives in first-appearance order."""
        return sorted({r for r in self.representative.values()})

    @property
    def num_clusters(self) -> int:
        return len(self.representatives)

    def clusters(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {r: [] for r in self.representatives}
        for layer in sorted(self.representative):
            out[self.representative[layer]].append(layer)
        return out

    def cluster_ids(self) -> Dict[int, int]:
        """Layer -> 1-based cluster number (clusters numbered by first appearance)."""
        number = {r: n + 1 for n, r in enumerate(self.representatives)}
        return {layer: number[r] for layer, r in self.representative.items()}

    def sequence(self) -> List[int]:
        """Cluster number of every layer, in layer order."""
        ids = self.cluster_ids()
        return [ids[layer] for layer in sorted(ids)]

    def tied_pairs(self) -> List[Tuple[int, int]]:
        return [(r, layer) for layer, r in sorted(self.representative.items()) if r != layer]


def assign_ties(similarity: LayerSimilarityMatrix, tau: float, group_id: str = "") -> TieAssignment:
    """Greedy clustering of layers by similarity, without touching any weights.

    Layer j joins the earliest cluster whose representative r has
    S[r, j] >= tau; otherwise it starts a new cluster.

    Raises:
        UsageError: If tau is outside (0, 1].
    """
    if not 0.0 < tau <= 1.0:
        raise UsageError(f"tau must lie in (0, 1], got {tau}")
    S = similarity.values
    representatives: List[int] = []
    representative: Dict[int, int] = {}
    sign: Dict[int, int] = {}
    for j in range(similarity.num_layers):
        for r in representatives:
            if S[r, j] >= tau:
                representative[j] = r
                sign[j] = -1 if similarity.signs[r, j] < 0 else 1
                logger.debug(f"Layer {j} tied to {r} (S={S[r, j]:.6f}, sign {sign[j]:+d})")
                break
        else:
            representatives.append(j)
            representative[j] = j
            sign[j] = 1
    return TieAssignment(
        group_id=group_id or similarity.group_id, representative=representative, sign=sign, tau=tau
    )


def tie_layers(
    group: SharingGroup, similarity: Optional[LayerSimilarityMatrix] = None, tau: float = 0.99
) -> TieAssignment:
    """Cluster the layers of `group` and replace tied rows by sign * alpha(rep), in place.

    Args:
        group: Sharing group whose coefficients are modified.
        similarity: LSM of the group; computed from the coefficients if omitted.
        tau: Similarity threshold in (0, 1].
    """
    if similarity is None:
        similarity = compute_lsm(group.coefficients, group.group_id)
    if similarity.num_layers != group.num_layers:
        raise UsageError(
            f"LSM has {similarity.num_layers} layers but group '{group.group_id}' has {group.num_layers}"
        )
    assignment = assign_ties(similarity, tau, group.group_id)
    values = group.coefficients.values.data
    norms = np.linalg.norm(values, axis=1)
    for layer, rep in assignment.representative.items():
        assignment.norm_ratio[layer] = float(norms[layer] / norms[rep])
    for rep, layer in assignment.tied_pairs():
        values[layer] = assignment.sign[layer] * values[rep]
    logger.info(
        f"Group '{group.group_id}': {group.num_layers} layers tied into "
        f"{assignment.num_clusters} clusters at tau={tau}"
    )
    return assignment


def _rescale_running_stats(network, conv_index: int, ratio: float) -> None:
    # The tied kernel is the old one divided by `ratio`; rescale the eval-mode
    # statistics of the following batchnorm so its output is unchanged.
    bn = network.bn_after(conv_index)
    if bn is None or ratio == 1.0:
        return
    stats = network.running[bn]
    if not stats.initialized:
        return
    stats.mean = stats.mean / ratio
    var = (stats.var + BN_EPS) / ratio**2 - BN_EPS
    if np.any(var < 0):
        logger.warning(
            f"Running variance of layer {bn} clamped at 0 after tying (norm ratio {ratio:.4g})"
        )
    stats.var = np.maximum(var, 0.0)


def tie_network(network, tau: float, group_ids: Optional[Sequence[str]] = None):
    """Tie every (or the listed) sharing group of a copy of `network`.

    Batchnorm running statistics after tied layers are rescaled by the
    coefficient norm ratio, so exactly collinear ties keep eval outputs.

    Returns:
        (tied network, {group id: TieAssignment})
    """
    tied = network.copy()
    ids = list(tied.groups) if group_ids is None else list(group_ids)
    assignments: Dict[str, TieAssignment] = {}
    for group_id in ids:
        if group_id not in tied.groups:
            raise UsageError(f"unknown sharing group '{group_id}', available: {sorted(tied.groups)}")
        group = tied.groups[group_id]
        assignment = tie_layers(group, tau=tau)
        for rep, layer in assignment.tied_pairs():
            _rescale_running_stats(tied, group.members[layer], assignment.norm_ratio[layer])
        assignments[group_id] = assignment
    return tied, assignments
