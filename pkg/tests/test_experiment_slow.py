import json

import numpy as np
import pandas as pd
import pytest

from hybrid_cnn.analysis import tie_network, verify_fold_equivalence
from hybrid_cnn.cli import main
from hybrid_cnn.errors import UsageError
from hybrid_cnn.tasks import GridDataset, bfs_distance_field, generate_dataset
from hybrid_cnn.training import (
    COMPARE_VARIANTS,
    OptimizerConfig,
    RunConfig,
    compare_models,
    summarize_comparison,
    train_curriculum,
)
from hybrid_cnn.sharing import compute_lsm

pytestmark = pytest.mark.slow


def test_compare_trains_every_variant(tiny_run_config, tmp_path):
    runs = compare_models(tiny_run_config, [0, 1], tmp_path / "compare", lambda_r=0.01)
    assert len(runs) == len(COMPARE_VARIANTS) * 2 * tiny_run_config.phases
    assert set(runs["variant"]) == set(COMPARE_VARIANTS)
    assert runs["val_f1"].between(0.0, 1.0).all()
    assert (tmp_path / "compare" / "scnn-r-seed1" / "metrics.csv").is_file()

    summary = summarize_comparison(runs)
    assert list(summary.columns) == ["phase", *COMPARE_VARIANTS]
    assert summary["phase"].tolist() == [1, 2]


def test_summary_takes_the_median_over_seeds():
    runs = pd.DataFrame(
        {
            "variant": ["cnn", "cnn", "cnn", "scnn"],
            "seed": [0, 1, 2, 0],
            "phase": [1, 1, 1, 1],
            "val_f1": [0.2, 0.9, 0.5, 0.7],
        }
    )
    summary = summarize_comparison(runs)
    assert list(summary.columns) == ["phase", "cnn", "scnn"]
    assert summary.loc[0, "cnn"] == pytest.approx(0.5)


def test_compare_needs_a_seed(tiny_run_config, tmp_path):
    with pytest.raises(UsageError):
        compare_models(tiny_run_config, [], tmp_path)


def test_strong_regulariser_makes_layers_similar(tiny_run_config, tmp_path):
    base = tiny_run_config.replace(depth=4, init_scheme="sparse", epochs_per_phase=10)
    plain = train_curriculum(base.replace(out_dir=str(tmp_path / "plain"))).metrics["lsm_offdiag_mean"]
    regularised = train_curriculum(
        base.replace(lambda_r=1.0, out_dir=str(tmp_path / "regularised"))
    ).metrics["lsm_offdiag_mean"]
    assert regularised.iloc[0] == plain.iloc[0]
    assert regularised.iloc[-1] > plain.iloc[-1]
    assert regularised.iloc[-1] > regularised.iloc[0]


def toy_regularised_config(tmp_path) -> RunConfig:
    # 45 training examples in batches of 9 for 40 epochs: 200 Adam steps.
    return RunConfig(
        model="scnn",
        depth=4,
        width=4,
        templates=2,
        grid=8,
        phases=1,
        examples_per_phase=50,
        epochs_per_phase=40,
        batch_size=9,
        lambda_r=1.0,
        optimizer=OptimizerConfig(kind="adam", lr=0.01),
        data_dir=str(tmp_path / "data"),
        out_dir=str(tmp_path / "toy"),
        generate_data=True,
    )


def test_train_command_with_a_strong_regulariser(tmp_path, capsys):
    config = toy_regularised_config(tmp_path).to_dict()
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(config))
    assert main(["train", "--config", str(path)]) == 0
    assert "final lsm_offdiag_mean" in capsys.readouterr().out

    metrics = pd.read_csv(tmp_path / "toy" / "metrics.csv")
    assert metrics["epoch"].iloc[-1] == 40
    assert metrics["lsm_offdiag_mean"].iloc[-1] >= 0.99


def test_regularised_model_folds_within_the_f1_tolerance(tmp_path):
    artifacts = train_curriculum(toy_regularised_config(tmp_path))
    network = artifacts.network
    assert compute_lsm(network.groups["body"].coefficients).offdiag_min() >= 0.99

    tied, assignments = tie_network(network, 0.999)
    tied.fold_signs(assignments["body"])
    probes = GridDataset.from_examples(generate_dataset(1, 100, seed=77, grid=8, threads=4))
    report = verify_fold_equivalence(network, tied, probes.inputs, probes.labels, threads=4)
    assert report.num_probes == 100
    assert np.isfinite(report.max_output_diff)
    assert abs(report.metric_delta) <= 0.01


def test_phase3_dataset_statistics():
    examples = generate_dataset(3, 10_000, seed=2024, grid=32, threads=4)
    non_query = sum(e.query.size - 2 for e in examples)
    obstacles = sum(int(e.obstacles.sum()) for e in examples)
    assert obstacles / non_query == pytest.approx(0.1, abs=0.01)

    for example in examples:
        q1, q2 = example.query_cells
        d1 = bfs_distance_field(example.obstacles, q1)
        d2 = bfs_distance_field(example.obstacles, q2)
        on = example.label == 1
        assert np.all(d1[on] + d2[on] == d1[q2])


def test_desk_scale_comparison_ordering(tmp_path):
    base = RunConfig(
        model="scnn",
        depth=8,
        width=16,
        grid=32,
        phases=5,
        examples_per_phase=500,
        epochs_per_phase=10,
        batch_size=32,
        optimizer=OptimizerConfig(kind="adam", lr=0.01),
        data_dir=str(tmp_path / "data"),
        out_dir=str(tmp_path / "unused"),
        generate_data=True,
        threads=4,
    )
    summary = summarize_comparison(compare_models(base, [0, 1, 2], tmp_path / "compare", lambda_r=0.01))
    first = summary[summary["phase"] == 1].iloc[0]
    last = summary[summary["phase"] == 5].iloc[0]
    assert last["scnn"] >= last["cnn"]
    assert first["scnn-r"] >= max(first["cnn"], first["scnn"])
    assert last["scnn"] >= last["scnn-r"]
