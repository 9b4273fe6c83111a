"""
Synthetic shortest-path segmentation task.

Each example is a square grid with two query cells and random obstacles; the
target marks every cell that lies on some shortest 4-connected path between
the queries (queries themselves excluded).
"""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hybrid_cnn.errors import DimensionError, GenerationError, UsageError

logger = logging.getLogger(__name__)

__all__ = [
    "GridExample",
    "CurriculumSpec",
    "GridDataset",
    "MAX_RETRIES",
    "bfs_distance_field",
    "shortest_path_label",
    "generate_example",
    "generate_dataset",
    "f1_score",
    "predict_mask",
]

MAX_RETRIES = 1000

_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))

Cell = Tuple[int, int]


@dataclass
class GridExample:
    """One grid: uint8 planes of shape (H, W) with values 0/1."""

    query: np.ndarray
    obstacles: np.ndarray
    label: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.query.shape

    @property
    def query_cells(self) -> List[Cell]:
        return [tuple(int(v) for v in c) for c in np.argwhere(self.query == 1)]

    def as_input(self) -> np.ndarray:
        """Network input of shape (2, H, W): channel 0 queries, channel 1 obstacles."""
        return np.stack([self.query, self.obstacles]).astype(np.float64)


@dataclass(frozen=True)
class CurriculumSpec:
    """Curriculum of phases with a growing query-separation window."""

    phases: int = 5
    examples_per_phase: int = 5000
    epochs_per_phase: int = 50
    grid: int = 32
    obstacle_p: float = 0.1

    def window(self, phase: int) -> int:
        """Side of the square window around query 1 that contains query 2."""
        self.check_phase(phase)
        return 5 + 4 * (phase - 1)

    def check_phase(self, phase: int) -> None:
        if not 1 <= phase <= self.phases:
            raise UsageError(f"phase must be in 1..{self.phases}, got {phase}")


def bfs_distance_field(obstacles: np.ndarray, source: Cell) -> np.ndarray:
    """Unit-cost 4-connected BFS distances from `source`; unreachable cells are inf.

    Raises:
        UsageError: If the source is outside the grid or on an obstacle.
    """
    obstacles = np.asarray(obstacles)
    h, w = obstacles.shape
    r0, c0 = source
    if not (0 <= r0 < h and 0 <= c0 < w):
        raise UsageError(f"source {source} lies outside the {h}x{w} grid")
    if obstacles[r0, c0]:
        raise UsageError(f"source {source} is an obstacle cell")
    dist = np.full((h, w), np.inf)
    dist[r0, c0] = 0.0
    queue = deque([(r0, c0)])
    while queue:
        r, c = queue.popleft()
        d = dist[r, c] + 1.0
        for dr, dc in _NEIGHBOURS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not obstacles[nr, nc] and dist[nr, nc] == np.inf:
                dist[nr, nc] = d
                queue.append((nr, nc))
    return dist


def shortest_path_label(obstacles: np.ndarray, q1: Cell, q2: Cell) -> Optional[np.ndarray]:
    """Union of all shortest q1-q2 paths without the endpoints, or None if unreachable."""
    from_q1 = bfs_distance_field(obstacles, q1)
    total = from_q1[q2]
    if not np.isfinite(total):
        return None
    from_q2 = bfs_distance_field(obstacles, q2)
    on_path = np.isfinite(from_q1) & (from_q1 + from_q2 == total)
    on_path[q1] = False
    on_path[q2] = False
    return on_path.astype(np.uint8)


def _sample_queries(grid: int, window: int, rng: np.random.Generator) -> Tuple[Cell, Cell]:
    q1 = (int(rng.integers(grid)), int(rng.integers(grid)))
    half = window // 2
    r_lo, r_hi = max(0, q1[0] - half), min(grid - 1, q1[0] + half)
    c_lo, c_hi = max(0, q1[1] - half), min(grid - 1, q1[1] + half)
    while True:
        q2 = (int(rng.integers(r_lo, r_hi + 1)), int(rng.integers(c_lo, c_hi + 1)))
        if q2 != q1:
            return q1, q2


def generate_example(
    phase: int,
    grid: int = 32,
    obstacle_p: float = 0.1,
    rng: Optional[np.random.Generator] = None,
    curriculum: Optional[CurriculumSpec] = None,
) -> GridExample:
    """Sample one example of the given curriculum phase.

    Query 2 is drawn from the phase window centred on query 1 (clipped to the
    grid). Unreachable pairs are resampled with fresh randomness.

    Raises:
        UsageError: Invalid phase, grid or obstacle probability.
        GenerationError: No reachable pair after `MAX_RETRIES` attempts.
    """
    curriculum = curriculum or CurriculumSpec()
    window = curriculum.window(phase)
    if grid < 2:
        raise UsageError(f"grid must be >= 2, got {grid}")
    if not 0.0 <= obstacle_p < 1.0:
        raise UsageError(f"obstacle_p must be in [0, 1), got {obstacle_p}")
    rng = rng if rng is not None else np.random.default_rng()

    for attempt in range(MAX_RETRIES):
        q1, q2 = _sample_queries(grid, window, rng)
        obstacles = (rng.random((grid, grid)) < obstacle_p).astype(np.uint8)
        obstacles[q1] = 0
        obstacles[q2] = 0
        label = shortest_path_label(obstacles, q1, q2)
        if label is None:
            logger.debug(f"Queries {q1} and {q2} unreachable, resampling (attempt {attempt + 1})")
            continue
        query = np.zeros((grid, grid), dtype=np.uint8)
        query[q1] = 1
        query[q2] = 1
        return GridExample(query=query, obstacles=obstacles, label=label)
    raise GenerationError(f"no reachable query pair after {MAX_RETRIES} attempts (phase {phase})")


def generate_dataset(
    phase: int,
    count: int,
    seed: int = 0,
    grid: int = 32,
    obstacle_p: float = 0.1,
    threads: int = 1,
    curriculum: Optional[CurriculumSpec] = None,
) -> List[GridExample]:
    """Generate `count` examples; example i uses its own generator seeded with seed ^ i.

    The result does not depend on `threads`.
    """
    if count < 0:
        raise UsageError(f"count must be >= 0, got {count}")
    if threads < 1:
        raise UsageError(f"threads must be >= 1, got {threads}")

    def _one(index: int) -> GridExample:
        return generate_example(
            phase, grid, obstacle_p, np.random.default_rng(seed ^ index), curriculum=curriculum
        )

    if threads == 1:
        examples = [_one(i) for i in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            examples = list(pool.map(_one, range(count)))
    logger.info(f"Generated {count} phase-{phase} examples on a {grid}x{grid} grid")
    return examples


@dataclass
class GridDataset:
    """Stacked examples: inputs (N, 2, H, W) float64 and labels (N, 1, H, W) float64."""

    inputs: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_examples(cls, examples: Sequence[GridExample]) -> "GridDataset":
        if not examples:
            raise UsageError("cannot build a dataset from zero examples")
        inputs = np.stack([e.as_input() for e in examples])
        labels = np.stack([e.label[None].astype(np.float64) for e in examples])
        return cls(inputs=inputs, labels=labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices: Sequence[int]) -> "GridDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return GridDataset(inputs=self.inputs[idx], labels=self.labels[idx])

    def split(self, val_fraction: float, rng: np.random.Generator) -> Tuple["GridDataset", "GridDataset"]:
        """Seeded (train, validation) split; validation gets ceil(fraction * N) examples."""
        n = len(self)
        n_val = int(np.ceil(val_fraction * n)) if val_fraction > 0 else 0
        if n_val >= n:
            raise UsageError(f"validation split of {val_fraction} leaves no training data out of {n}")
        order = rng.permutation(n)
        return self.subset(np.sort(order[n_val:])), self.subset(np.sort(order[:n_val]))

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(self), batch_size):
            idx = order[start : start + batch_size]
            yield self.inputs[idx], self.labels[idx]


def predict_mask(logits: np.ndarray) -> np.ndarray:
    """sigmoid(logit) > 0.5, i.e. logit > 0."""
    return (np.asarray(logits) > 0.0).astype(np.uint8)


def f1_score(pred: np.ndarray, truth: np.ndarray) -> float:
    """Micro-averaged F1 over all pixels: 2TP / (2TP + FP + FN).

    Returns 1.0 when both masks are entirely empty.
    """
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} differs from truth shape {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)
