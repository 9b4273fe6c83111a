"""
Loop detection over cluster sequences and the folded (recurrent) graph.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

from hybrid_cnn.errors import UsageError

logger = logging.getLogger(__name__)

__all__ = [
    "FoldedSegment",
    "LoopAnnotation",
    "FoldedGraph",
    "FoldSummary",
    "detect_loops",
    "fold_assignment",
    "summarize_fold",
]


@dataclass(frozen=True)
class FoldedSegment:
    """`body` executed `count` times in a row; plain nodes have count 1 and a single-element body."""

    body: Tuple[Hashable, ...]
    count: int = 1

    @property
    def is_loop(self) -> bool:
        return self.count >= 2

    def unroll(self) -> List[Hashable]:
        return list(self.body) * self.count


@dataclass(frozen=True)
class LoopAnnotation:
    body: Tuple[Hashable, ...]
    count: int
    start: int

    @property
    def entry(self) -> Hashable:
        return self.body[0]

    @property
    def exit(self) -> Hashable:
        return self.body[-1]


@dataclass
class FoldedGraph:
    """A cluster sequence rewritten as plain nodes and loops.

    Attributes:
        segments: Segments in execution order.
        input_signs: Sequence position -> -1 for layers whose input edge
            carries a -1 multiplier.
    """

    segments: List[FoldedSegment]
    input_signs: Dict[int, int] = field(default_factory=dict)

    def unroll(self) -> List[Hashable]:
        out: List[Hashable] = []
        for segment in self.segments:
            out.extend(segment.unroll())
        return out

    @property
    def nodes(self) -> List[Hashable]:
        """Unique clusters in first-appearance order."""
        seen: List[Hashable] = []
        for item in self.unroll():
            if item not in seen:
                seen.append(item)
        return seen

    @property
    def loops(self) -> List[LoopAnnotation]:
        loops = []
        position = 0
        for segment in self.segments:
            if segment.is_loop:
                loops.append(LoopAnnotation(segment.body, segment.count, position))
            position += len(segment.body) * segment.count
        return loops

    def edges(self) -> Dict[Tuple[Hashable, Hashable], int]:
        """Directed transitions between consecutive visits with their traversal counts."""
        sequence = self.unroll()
        return dict(Counter(zip(sequence[:-1], sequence[1:])))

    def forward_edges(self) -> List[Tuple[Hashable, Hashable]]:
        """Edges of the folded drawing that are not loop back-edges, in execution order."""
        out: List[Tuple[Hashable, Hashable]] = []
        previous: Optional[Hashable] = None
        for segment in self.segments:
            body = list(segment.body)
            if previous is not None:
                out.append((previous, body[0]))
            out.extend(zip(body[:-1], body[1:]))
            previous = body[-1]
        return out

    @property
    def num_visits(self) -> int:
        return sum(len(s.body) * s.count for s in self.segments)


def _repetitions(sequence: Sequence[Hashable], start: int, period: int) -> int:
    body = list(sequence[start : start + period])
    count = 1
    position = start + period
    while position + period <= len(sequence) and list(sequence[position : position + period]) == body:
        count += 1
        position += period
    return count


def detect_loops(sequence: Sequence[Hashable], input_signs: Optional[Dict[int, int]] = None) -> FoldedGraph:
    """Greedy left-to-right loop compression of a cluster sequence.

    At each position the period p whose block repeats r >= 2 times covering
    the longest span is chosen (the smallest p on ties) and emitted as a loop;
    when no block repeats, a plain node is emitted.

    Args:
        sequence: Cluster ids in layer order.
        input_signs: Optional position -> -1 markers carried into the graph.

    Raises:
        UsageError: If the sequence is empty.
    """
    if len(sequence) == 0:
        raise UsageError("cannot fold an empty layer sequence")
    seq = list(sequence)
    segments: List[FoldedSegment] = []
    position = 0
    while position < len(seq):
        best_period, best_count, best_span = 0, 1, 0
        for period in range(1, (len(seq) - position) // 2 + 1):
            count = _repetitions(seq, position, period)
            if count >= 2 and period * count > best_span:
                best_period, best_count, best_span = period, count, period * count
        if best_span:
            body = tuple(seq[position : position + best_period])
            segments.append(FoldedSegment(body, best_count))
            logger.debug(f"Loop {body} x{best_count} at position {position}")
            position += best_span
        else:
            segments.append(FoldedSegment((seq[position],), 1))
            position += 1
    signs = {p: -1 for p, s in (input_signs or {}).items() if s < 0}
    return FoldedGraph(segments=segments, input_signs=signs)


def fold_assignment(assignment) -> FoldedGraph:
    """FoldedGraph of a `TieAssignment`, with its negative ties as -1 input edges."""
    negative = {layer: -1 for layer, s in assignment.sign.items() if s < 0}
    return detect_loops(assignment.sequence(), negative)


@dataclass
class FoldSummary:
    """Size of a sharing group before and after folding."""

    group_id: str
    clusters: int
    layers_before: int
    layers_after: int
    kernel_params_before: int
    kernel_params_after: int
    soft_sharing_params: int
    loops: int

    @property
    def kernel_params_saved(self) -> int:
        return self.kernel_params_before - self.kernel_params_after

    def as_dict(self) -> Dict[str, Any]:
        return {
            "group_id": self.group_id,
            "clusters": self.clusters,
            "layers_before": self.layers_before,
            "layers_after": self.layers_after,
            "kernel_params_before": self.kernel_params_before,
            "kernel_params_after": self.kernel_params_after,
            "kernel_params_saved": self.kernel_params_saved,
            "soft_sharing_params": self.soft_sharing_params,
            "loops": self.loops,
        }


def summarize_fold(group, assignment, graph: Optional[FoldedGraph] = None) -> FoldSummary:
    """Materialised kernel parameters of `group` unfolded vs. one kernel per cluster."""
    graph = graph or fold_assignment(assignment)
    size = group.bank.template_size
    return FoldSummary(
        group_id=group.group_id,
        clusters=assignment.num_clusters,
        layers_before=group.num_layers,
        layers_after=len(graph.nodes),
        kernel_params_before=group.num_layers * size,
        kernel_params_after=assignment.num_clusters * size,
        soft_sharing_params=group.num_parameters(),
        loops=len(graph.loops),
    )
