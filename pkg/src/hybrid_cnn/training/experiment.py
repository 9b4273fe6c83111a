"""
Side-by-side curriculum runs of a plain CNN, an SCNN and a regularised SCNN.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence

import pandas as pd

from hybrid_cnn.errors import UsageError
from hybrid_cnn.training.config import RunConfig
from hybrid_cnn.training.trainer import prepare_phase_data, train_curriculum

logger = logging.getLogger(__name__)

__all__ = ["COMPARE_VARIANTS", "compare_models", "summarize_comparison"]

COMPARE_VARIANTS = ("cnn", "scnn", "scnn-r")


def _variant_config(base: RunConfig, variant: str, seed: int, out_dir: Path, lambda_r: float) -> RunConfig:
    changes = {"seed": seed, "out_dir": str(out_dir / f"{variant}-seed{seed}"), "generate_data": False}
    if variant == "cnn":
        changes.update(model="cnn", lambda_r=0.0)
    elif variant == "scnn":
        changes.update(model="scnn", lambda_r=0.0)
    else:
        changes.update(model="scnn", lambda_r=lambda_r)
    return base.replace(**changes)


def compare_models(
    base: RunConfig, seeds: Sequence[int], out_dir: Path, lambda_r: float = 0.01
) -> pd.DataFrame:
    """Train every variant for every seed on the same phase datasets.

    Returns:
        One row per (variant, seed, phase) with the final validation F1 of that phase.
    """
    if not seeds:
        raise UsageError("compare needs at least one seed")
    out_dir = Path(out_dir)
    # All runs read the same files, generated once from the base config.
    prepare_phase_data(base)
    rows: List[Dict] = []
    for seed in seeds:
        for variant in COMPARE_VARIANTS:
            config = _variant_config(base, variant, seed, out_dir, lambda_r)
            logger.info(f"Training {variant} with seed {seed}")
            artifacts = train_curriculum(config)
            for phase in range(1, config.phases + 1):
                rows.append(
                    {"variant": variant, "seed": seed, "phase": phase, "val_f1": artifacts.final_val_f1(phase)}
                )
    return pd.DataFrame(rows, columns=["variant", "seed", "phase", "val_f1"])


def summarize_comparison(runs: pd.DataFrame) -> pd.DataFrame:
    """Median final-phase F1 over seeds, one row per phase and one column per variant."""
    table = runs.pivot_table(index="phase", columns="variant", values="val_f1", aggfunc="median")
    return table.reindex(columns=[v for v in COMPARE_VARIANTS if v in table.columns]).reset_index()
