"""
Curriculum training loop for the shortest-path task.

Each phase trains on its own dataset file only. After every epoch one metrics
row and one LSM snapshot per sharing group are recorded; a checkpoint is
written at the end of every phase and of the run.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import xarray as xr

from hybrid_cnn.analysis import lsm_records, lsm_summary, lsm_timeseries
from hybrid_cnn.core import Tensor, backward
from hybrid_cnn.core import functional as F
from hybrid_cnn.errors import NonFiniteError, UsageError
from hybrid_cnn.models import ArchitectureSpec, Network, build_shortest_path_model
from hybrid_cnn.sharing import LayerSimilarityMatrix, compute_lsm, recurrence_regularized_loss
from hybrid_cnn.tasks import GridDataset, f1_score, generate_dataset, predict_mask, read_dataset, write_dataset
from hybrid_cnn.training.checkpoint import (
    CheckpointState,
    load_checkpoint,
    network_from_checkpoint,
    network_to_checkpoint,
    save_checkpoint,
)
from hybrid_cnn.training.config import RunConfig
from hybrid_cnn.training.optim import Optimizer, OptimizerState
from hybrid_cnn.utils import derive_seed, dicts_equal, write_pgm

logger = logging.getLogger(__name__)

__all__ = [
    "METRICS_COLUMNS",
    "RunArtifacts",
    "CurriculumTrainer",
    "build_model",
    "prepare_phase_data",
    "evaluate",
    "train_curriculum",
]

METRICS_COLUMNS = ["phase", "epoch", "train_loss", "val_f1", "lr", "lsm_offdiag_mean"]

# Keys that may differ between an interrupted run and its resumption.
_RESUME_FREE_KEYS = ("out_dir", "threads", "data_dir", "generate_data")


def build_model(config: RunConfig) -> Network:
    """Instantiate the network a config describes."""
    if config.model == "scnn":
        spec = build_shortest_path_model(True, config.depth, config.width, templates=config.templates)
    elif config.model == "cnn":
        spec = build_shortest_path_model(False, config.depth, config.width)
    else:
        spec = ArchitectureSpec.from_json(config.model)
    return Network(
        spec,
        seed=config.seed,
        init_scheme=config.init_scheme,
        strategy=config.strategy,
        sparse_distribution=config.sparse_distribution,
    )


def prepare_phase_data(config: RunConfig) -> List[Path]:
    """Paths of all phase files; missing ones are generated when the config allows it.

    Raises:
        FileNotFoundError: A phase file is missing and generation is off.
    """
    paths = []
    for phase in range(1, config.phases + 1):
        path = config.phase_data_path(phase)
        if not path.is_file():
            if not config.generate_data:
                raise FileNotFoundError(f"dataset for phase {phase} not found at {path}")
            examples = generate_dataset(
                phase,
                config.examples_per_phase,
                seed=derive_seed(config.data_seed, phase),
                grid=config.grid,
                obstacle_p=config.obstacle_p,
                threads=config.threads,
                curriculum=config.curriculum,
            )
            write_dataset(path, examples, (config.grid, config.grid))
        paths.append(path)
    return paths


def evaluate(network: Network, dataset: GridDataset, batch_size: int = 32, threads: int = 1) -> Tuple[float, float]:
    """(micro F1, mean BCE loss) of `network` on `dataset`.

    Networks whose batchnorm statistics are uninitialised are evaluated with
    batch statistics.
    """
    logits = network.infer(dataset.inputs, batch_size=batch_size, threads=threads)
    z, y = logits, dataset.labels
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    return f1_score(predict_mask(logits), dataset.labels), loss


@dataclass
class RunArtifacts:
    """Everything a training run produced."""

    out_dir: Path
    network: Network
    metrics: pd.DataFrame
    metrics_path: Path
    checkpoints: List[Path] = field(default_factory=list)
    lsm: Dict[str, xr.DataArray] = field(default_factory=dict)

    def final_val_f1(self, phase: Optional[int] = None) -> float:
        rows = self.metrics if phase is None else self.metrics[self.metrics["phase"] == phase]
        if rows.empty:
            return float("nan")
        return float(rows["val_f1"].iloc[-1])


class CurriculumTrainer:
    """Trains one network through all curriculum phases of a `RunConfig`.

    Args:
        config: Validated run configuration.
        network: Network to train; built from the config when omitted.
    """

    def __init__(self, config: RunConfig, network: Optional[Network] = None):
        config.validate()
        self.config = config
        self.network = network if network is not None else build_model(config)
        self.optimizer = Optimizer(self.network.named_parameters(), config.optimizer)
        self.shuffle_rng = np.random.default_rng(derive_seed(config.seed, 1))
        self.rows: List[Dict[str, Any]] = []
        self.snapshots: Dict[str, List[Tuple[int, LayerSimilarityMatrix]]] = {g: [] for g in self.network.groups}
        self.checkpoints: List[Path] = []
        self.completed_phases = 0
        self.out_dir = Path(config.out_dir)

    # ------------------------------------------------------------ bookkeeping
    def _global_epoch(self, phase: int, epoch: int) -> int:
        return (phase - 1) * self.config.epochs_per_phase + epoch

    def _record(self, phase: int, epoch: int, train_loss: float, val_f1: float, lr: float) -> None:
        offdiag = []
        for group_id, group in self.network.groups.items():
            lsm = compute_lsm(group.coefficients, group_id)
            self.snapshots[group_id].append((self._global_epoch(phase, epoch), lsm))
            offdiag.append(lsm.offdiag_mean())
        row = {
            "phase": phase,
            "epoch": epoch,
            "train_loss": train_loss,
            "val_f1": val_f1,
            "lr": lr,
            "lsm_offdiag_mean": float(np.mean(offdiag)) if offdiag else np.nan,
        }
        self.rows.append(row)
        logger.info(
            f"phase {phase} epoch {epoch}: loss={train_loss:.5f} val_f1={val_f1:.4f} "
            f"lr={lr:.3g} lsm_offdiag_mean={row['lsm_offdiag_mean']:.4f}"
        )

    def _checkpoint_state(self, phase: int) -> CheckpointState:
        meta = {
            "config": self.config.to_dict(),
            "completed_phases": phase,
            "optimizer_step": self.optimizer.state.step,
            "rng": self.shuffle_rng.bit_generator.state,
            "metrics": self.rows,
            "lsm": {
                g: [{"epoch": e, "values": lsm.values} for e, lsm in snaps] for g, snaps in self.snapshots.items()
            },
        }
        return network_to_checkpoint(self.network, meta, self.optimizer.state.to_arrays())

    def restore(self, state: CheckpointState) -> None:
        """Continue from a phase checkpoint written by this trainer.

        Raises:
            UsageError: The checkpoint was written for a different configuration.
        """
        saved = dict(state.meta.get("config", {}))
        ours = self.config.to_dict()
        for key in _RESUME_FREE_KEYS:
            saved.pop(key, None)
            ours.pop(key, None)
        if not dicts_equal(saved, ours):
            changed = sorted(k for k in set(saved) | set(ours) if saved.get(k) != ours.get(k))
            raise UsageError(f"checkpoint was written with a different configuration (differs in {changed})")
        self.network = network_from_checkpoint(state)
        self.optimizer = Optimizer(
            self.network.named_parameters(),
            self.config.optimizer,
            OptimizerState.from_arrays(int(state.meta["optimizer_step"]), state.tensors),
        )
        self.shuffle_rng = np.random.default_rng()
        self.shuffle_rng.bit_generator.state = state.meta["rng"]
        # NaN metrics are stored as null.
        self.rows = [{k: np.nan if v is None else v for k, v in r.items()} for r in state.meta.get("metrics", [])]
        self.snapshots = {g: [] for g in self.network.groups}
        for group_id, snaps in state.meta.get("lsm", {}).items():
            for snap in snaps:
                values = np.asarray(snap["values"], dtype=np.float64)
                self.snapshots[group_id].append(
                    (int(snap["epoch"]), LayerSimilarityMatrix(values, np.ones_like(values), group_id))
                )
        self.completed_phases = int(state.meta["completed_phases"])
        logger.info(f"Resumed after phase {self.completed_phases} (optimizer step {self.optimizer.state.step})")

    # ------------------------------------------------------------------ train
    def _train_epoch(self, train: GridDataset, lr: float, phase: int, epoch: int) -> float:
        cfg = self.config
        groups = self.network.sharing_groups()
        order = self.shuffle_rng.permutation(len(train))
        losses = []
        for batch, (x, y) in enumerate(train.batches(cfg.batch_size, order)):
            self.optimizer.zero_grad()
            try:
                logits = self.network.forward(Tensor(x), train=True)
                task_loss = F.bce_with_logits(logits, Tensor(y))
                loss = recurrence_regularized_loss(task_loss, groups, cfg.lambda_r)
                backward(loss)
            except NonFiniteError as e:
                raise NonFiniteError(
                    "training diverged",
                    {"phase": phase, "epoch": epoch, "batch": batch, "lr": lr, "cause": str(e)},
                ) from e
            self.optimizer.step(lr)
            losses.append(task_loss.item())
        return float(np.mean(losses)) if losses else float("nan")

    def _split(self, path: Path, phase: int) -> Tuple[GridDataset, GridDataset]:
        dataset = GridDataset.from_examples(read_dataset(path))
        rng = np.random.default_rng(derive_seed(self.config.seed, 2, phase))
        return dataset.split(self.config.val_fraction, rng)

    def run(self) -> RunArtifacts:
        cfg = self.config
        paths = prepare_phase_data(cfg)
        self.out_dir.mkdir(parents=True, exist_ok=True)

        if not self.rows:
            _, val = self._split(paths[0], 1)
            f1, loss = evaluate(self.network, val, cfg.batch_size, cfg.threads)
            self._record(1, 0, loss, f1, cfg.schedule.lr_at(0, cfg.optimizer.lr))

        for phase in range(self.completed_phases + 1, cfg.phases + 1):
            train, val = self._split(paths[phase - 1], phase)
            logger.info(f"Phase {phase}: {len(train)} training and {len(val)} validation examples")
            for epoch in range(1, cfg.epochs_per_phase + 1):
                lr = cfg.schedule.lr_at(self._global_epoch(phase, epoch) - 1, cfg.optimizer.lr)
                train_loss = self._train_epoch(train, lr, phase, epoch)
                f1, _ = evaluate(self.network, val, cfg.batch_size, cfg.threads)
                self._record(phase, epoch, train_loss, f1, lr)
            self.completed_phases = phase
            path = self.out_dir / "checkpoints" / f"phase{phase}.ckpt"
            save_checkpoint(self._checkpoint_state(phase), path)
            self.checkpoints.append(path)

        final = self.out_dir / "final.ckpt"
        save_checkpoint(self._checkpoint_state(self.completed_phases), final)
        self.checkpoints.append(final)
        return self._write_artifacts()

    def _write_artifacts(self) -> RunArtifacts:
        metrics = pd.DataFrame(self.rows, columns=METRICS_COLUMNS)
        metrics_path = self.out_dir / "metrics.csv"
        metrics.to_csv(metrics_path, index=False, float_format="%.10g")

        series: Dict[str, xr.DataArray] = {}
        lsm_dir = self.out_dir / "lsm"
        for group_id, snaps in self.snapshots.items():
            if not snaps:
                continue
            lsm_dir.mkdir(parents=True, exist_ok=True)
            series[group_id] = lsm_timeseries(snaps)
            lsm_records(series[group_id]).to_csv(
                lsm_dir / f"{group_id}_timeseries.csv", index=False, float_format="%.9g"
            )
            lsm_summary(series[group_id]).to_csv(
                lsm_dir / f"{group_id}_summary.csv", index=False, float_format="%.9g"
            )
            if self.config.lsm_pgm:
                for epoch, lsm in snaps:
                    write_pgm(lsm.values, lsm_dir / f"{group_id}_epoch{epoch:04d}.pgm")
        logger.info(f"Wrote metrics to {metrics_path}")
        return RunArtifacts(
            out_dir=self.out_dir,
            network=self.network,
            metrics=metrics,
            metrics_path=metrics_path,
            checkpoints=list(self.checkpoints),
            lsm=series,
        )


def train_curriculum(
    config: RunConfig, network: Optional[Network] = None, resume: Optional[Union[str, Path]] = None
) -> RunArtifacts:
    """Train through the whole curriculum, optionally resuming from a phase checkpoint."""
    trainer = CurriculumTrainer(config, network)
    if resume is not None:
        trainer.restore(load_checkpoint(resume))
    return trainer.run()
