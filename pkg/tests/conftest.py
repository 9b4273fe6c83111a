import os

import numpy as np
import pytest

from hybrid_cnn.core import Tensor
from hybrid_cnn.models import ArchitectureSpec, GroupSpec, LayerKind, LayerSpec, Network, build_shortest_path_model
from hybrid_cnn.training import RunConfig


def pytest_collection_modifyitems(config, items):
    if os.environ.get("HYBRID_CNN_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set HYBRID_CNN_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tensor(rng, *shape, requires_grad=True):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


@pytest.fixture
def small_scnn():
    """Shared 4-block network on 4 channels; one template per layer."""
    return Network(build_shortest_path_model(True, depth=4, width=4), seed=3)


@pytest.fixture
def small_cnn():
    return Network(build_shortest_path_model(False, depth=4, width=4), seed=3)


def linear_group_spec(num_shared: int = 3, width: int = 3, k: int = 3) -> ArchitectureSpec:
    """conv1x1 stem, `num_shared` grouped 3x3 convs and a 1x1 head; no nonlinearity."""
    layers = [LayerSpec(LayerKind.CONV1X1, 2, width, name="stem")]
    for i in range(num_shared):
        layers.append(LayerSpec(LayerKind.CONV3X3, width, width, group="body", name=f"conv{i}"))
    layers.append(LayerSpec(LayerKind.CONV1X1, width, 1, name="head", bias=True))
    return ArchitectureSpec(
        name="linear-probe",
        layers=layers,
        groups={"body": GroupSpec("body", k, (width, width, 3, 3))},
        input_channels=2,
    )


def set_coefficients(network: Network, rows, group_id: str = "body") -> None:
    values = network.groups[group_id].coefficients.values.data
    values[...] = np.asarray(rows, dtype=np.float64)


def warm_up_batchnorm(network: Network, rng, steps: int = 3, grid: int = 6) -> None:
    """Initialise running statistics with a few training-mode forward passes."""
    for _ in range(steps):
        network.forward(Tensor(rng.standard_normal((4, network.spec.input_channels, grid, grid))), train=True)


@pytest.fixture
def tiny_run_config(tmp_path):
    """A curriculum that trains in seconds: 8x8 grids, two phases, one epoch each."""
    return RunConfig(
        model="scnn",
        depth=2,
        width=4,
        grid=8,
        phases=2,
        examples_per_phase=20,
        epochs_per_phase=1,
        batch_size=8,
        data_dir=str(tmp_path / "data"),
        out_dir=str(tmp_path / "run"),
        generate_data=True,
    )
