"""
Epoch-wise layer similarity matrices as labelled arrays.
"""

import logging
from typing import Sequence, Tuple

import numpy as np
import pandas as pd
import xarray as xr

from hybrid_cnn.errors import DimensionError, UsageError
from hybrid_cnn.sharing import LayerSimilarityMatrix, offdiag_mean

logger = logging.getLogger(__name__)

__all__ = ["lsm_timeseries", "lsm_summary", "lsm_records"]


def lsm_timeseries(snapshots: Sequence[Tuple[int, LayerSimilarityMatrix]]) -> xr.DataArray:
    """Stack (epoch, LSM) snapshots into a DataArray with dims (epoch, layer_i, layer_j).

    Raises:
        UsageError: No snapshots, or epochs not strictly ascending.
        DimensionError: Snapshots with different layer counts.
    """
    if not snapshots:
        raise UsageError("need at least one LSM snapshot")
    epochs = [int(e) for e, _ in snapshots]
    if any(b <= a for a, b in zip(epochs[:-1], epochs[1:])):
        raise UsageError(f"snapshot epochs must be strictly ascending, got {epochs}")
    sizes = {lsm.num_layers for _, lsm in snapshots}
    if len(sizes) != 1:
        raise DimensionError(f"snapshots disagree on the number of layers: {sorted(sizes)}")
    n = sizes.pop()
    values = np.stack([lsm.values for _, lsm in snapshots])
    return xr.DataArray(
        values,
        dims=("epoch", "layer_i", "layer_j"),
        coords={"epoch": epochs, "layer_i": np.arange(n), "layer_j": np.arange(n)},
        name="lsm",
        attrs={"group_id": snapshots[0][1].group_id},
    )


def lsm_summary(series: xr.DataArray) -> pd.DataFrame:
    """Off-diagonal mean and minimum per epoch."""
    n = series.sizes["layer_i"]
    off = ~np.eye(n, dtype=bool)
    rows = []
    for epoch in series["epoch"].values:
        values = series.sel(epoch=epoch).values
        rows.append(
            {
                "epoch": int(epoch),
                "offdiag_mean": offdiag_mean(values),
                "offdiag_min": float(values[off].min()) if n > 1 else 1.0,
            }
        )
    return pd.DataFrame(rows, columns=["epoch", "offdiag_mean", "offdiag_min"])


def lsm_records(series: xr.DataArray) -> pd.DataFrame:
    """Long-format records (epoch, layer_i, layer_j, similarity) for CSV export."""
    return series.to_dataframe(name="similarity").reset_index()[["epoch", "layer_i", "layer_j", "similarity"]]
