import networkx as nx
import numpy as np
import pytest

from hybrid_cnn.errors import DimensionError, GenerationError, UsageError
from hybrid_cnn.tasks import shortest_path
from hybrid_cnn.tasks import (
    CurriculumSpec,
    GridDataset,
    bfs_distance_field,
    f1_score,
    generate_dataset,
    generate_example,
    predict_mask,
    shortest_path_label,
)


def grid_graph(obstacles: np.ndarray) -> nx.Graph:
    graph = nx.grid_2d_graph(*obstacles.shape)
    graph.remove_nodes_from([tuple(int(v) for v in c) for c in np.argwhere(obstacles)])
    return graph


class TestDistanceField:
    def test_empty_grid_is_manhattan(self):
        dist = bfs_distance_field(np.zeros((6, 7), dtype=np.uint8), (2, 3))
        rows, cols = np.indices((6, 7))
        np.testing.assert_array_equal(dist, np.abs(rows - 2) + np.abs(cols - 3))

    def test_enclosed_source(self):
        obstacles = np.zeros((5, 5), dtype=np.uint8)
        obstacles[1:4, 1:4] = 1
        obstacles[2, 2] = 0
        dist = bfs_distance_field(obstacles, (2, 2))
        assert dist[2, 2] == 0
        assert np.all(np.isinf(np.delete(dist.reshape(-1), 12)))

    def test_matches_networkx(self):
        rng = np.random.default_rng(13)
        obstacles = (rng.random((16, 16)) < 0.25).astype(np.uint8)
        obstacles[0, 0] = 0
        dist = bfs_distance_field(obstacles, (0, 0))
        lengths = nx.single_source_shortest_path_length(grid_graph(obstacles), (0, 0))
        for r in range(16):
            for c in range(16):
                expected = lengths.get((r, c), np.inf)
                assert dist[r, c] == expected, (r, c)

    def test_source_on_obstacle(self):
        obstacles = np.zeros((3, 3), dtype=np.uint8)
        obstacles[1, 1] = 1
        with pytest.raises(UsageError):
            bfs_distance_field(obstacles, (1, 1))
        with pytest.raises(UsageError):
            bfs_distance_field(obstacles, (3, 0))


class TestLabel:
    def test_open_rectangle(self):
        label = shortest_path_label(np.zeros((5, 5), dtype=np.uint8), (0, 0), (2, 2))
        assert label.sum() == 7
        assert label[:3, :3].sum() == 7
        assert label[0, 0] == 0 and label[2, 2] == 0

    def test_adjacent_queries_have_an_empty_label(self):
        assert shortest_path_label(np.zeros((4, 4), dtype=np.uint8), (1, 1), (1, 2)).sum() == 0

    def test_wall_with_a_gap(self):
        obstacles = np.zeros((5, 5), dtype=np.uint8)
        obstacles[:, 2] = 1
        obstacles[4, 2] = 0
        label = shortest_path_label(obstacles, (0, 0), (0, 4))
        assert label[4, 2] == 1
        graph = grid_graph(obstacles)
        expected = set()
        for path in nx.all_shortest_paths(graph, (0, 0), (0, 4)):
            expected.update(path[1:-1])
        assert {tuple(int(v) for v in c) for c in np.argwhere(label)} == expected

    def test_unreachable(self):
        obstacles = np.zeros((3, 3), dtype=np.uint8)
        obstacles[:, 1] = 1
        assert shortest_path_label(obstacles, (0, 0), (0, 2)) is None

    def test_symmetry_and_union_of_all_shortest_paths(self):
        rng = np.random.default_rng(21)
        checked = 0
        while checked < 20:
            obstacles = (rng.random((10, 10)) < 0.2).astype(np.uint8)
            free = [tuple(int(v) for v in c) for c in np.argwhere(obstacles == 0)]
            q1, q2 = (free[i] for i in rng.choice(len(free), 2, replace=False))
            label = shortest_path_label(obstacles, q1, q2)
            if label is None:
                continue
            np.testing.assert_array_equal(label, shortest_path_label(obstacles, q2, q1))
            expected = set()
            for path in nx.all_shortest_paths(grid_graph(obstacles), q1, q2):
                expected.update(path[1:-1])
            assert {tuple(int(v) for v in c) for c in np.argwhere(label)} == expected
            checked += 1


class TestGeneration:
    def test_window_grows_by_four_per_phase(self):
        curriculum = CurriculumSpec()
        assert [curriculum.window(p) for p in range(1, 6)] == [5, 9, 13, 17, 21]
        with pytest.raises(UsageError):
            curriculum.window(6)
        with pytest.raises(UsageError):
            curriculum.window(0)

    @pytest.mark.parametrize("phase", [1, 3, 5])
    def test_example_respects_the_window(self, phase):
        rng = np.random.default_rng(phase)
        half = CurriculumSpec().window(phase) // 2
        for _ in range(30):
            example = generate_example(phase, rng=rng)
            (r1, c1), (r2, c2) = example.query_cells
            assert (r1, c1) != (r2, c2)
            assert abs(r1 - r2) <= 2 * half and abs(c1 - c2) <= 2 * half
            assert example.obstacles[r1, c1] == 0 and example.obstacles[r2, c2] == 0
            assert np.all(example.label[example.obstacles == 1] == 0)

    def test_labels_lie_on_shortest_paths(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            example = generate_example(2, grid=12, rng=rng)
            q1, q2 = example.query_cells
            d1 = bfs_distance_field(example.obstacles, q1)
            d2 = bfs_distance_field(example.obstacles, q2)
            on = example.label == 1
            np.testing.assert_array_equal(d1[on] + d2[on], np.full(on.sum(), d1[q2]))

    def test_obstacle_density(self):
        examples = generate_dataset(1, 200, seed=8, grid=32)
        non_query = sum(e.query.size - 2 for e in examples)
        obstacles = sum(int(e.obstacles.sum()) for e in examples)
        # Resampled unreachable grids bias the density slightly downwards.
        assert obstacles / non_query == pytest.approx(0.1, abs=0.01)

    def test_no_obstacles(self):
        example = generate_example(1, grid=8, obstacle_p=0.0, rng=np.random.default_rng(0))
        assert example.obstacles.sum() == 0
        (r1, c1), (r2, c2) = example.query_cells
        assert example.label.sum() == (abs(r1 - r2) + 1) * (abs(c1 - c2) + 1) - 2

    def test_dataset_is_independent_of_thread_count(self):
        a = generate_dataset(3, 12, seed=5, grid=16, threads=1)
        b = generate_dataset(3, 12, seed=5, grid=16, threads=4)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.as_input(), y.as_input())
            np.testing.assert_array_equal(x.label, y.label)

    def test_example_index_uses_its_own_seed(self):
        full = generate_dataset(1, 5, seed=9, grid=16)
        single = generate_example(1, 16, 0.1, np.random.default_rng(9 ^ 3))
        np.testing.assert_array_equal(full[3].query, single.query)

    def test_invalid_arguments(self):
        with pytest.raises(UsageError):
            generate_example(1, grid=8, obstacle_p=1.0)
        with pytest.raises(UsageError):
            generate_dataset(1, -1)
        with pytest.raises(UsageError):
            generate_dataset(1, 3, threads=0)

    def test_gives_up_after_bounded_retries(self, monkeypatch):
        monkeypatch.setattr(shortest_path, "MAX_RETRIES", 5)
        monkeypatch.setattr(shortest_path, "shortest_path_label", lambda *args: None)
        with pytest.raises(GenerationError):
            generate_example(1, grid=8, rng=np.random.default_rng(0))


class TestDataset:
    def test_split_sizes_are_deterministic(self):
        dataset = GridDataset.from_examples(generate_dataset(1, 20, seed=0, grid=8))
        assert dataset.inputs.shape == (20, 2, 8, 8)
        assert dataset.labels.shape == (20, 1, 8, 8)
        train, val = dataset.split(0.1, np.random.default_rng(0))
        assert (len(train), len(val)) == (18, 2)
        again, _ = dataset.split(0.1, np.random.default_rng(0))
        np.testing.assert_array_equal(train.inputs, again.inputs)

    def test_split_must_leave_training_data(self):
        dataset = GridDataset.from_examples(generate_dataset(1, 2, seed=0, grid=8))
        with pytest.raises(UsageError):
            dataset.split(0.9, np.random.default_rng(0))

    def test_batches_cover_the_dataset(self):
        dataset = GridDataset.from_examples(generate_dataset(1, 7, seed=0, grid=8))
        sizes = [x.shape[0] for x, _ in dataset.batches(3)]
        assert sizes == [3, 3, 1]


class TestF1:
    def test_perfect_prediction(self):
        truth = np.array([[0, 1, 1], [0, 0, 1]])
        assert f1_score(truth, truth) == 1.0

    def test_counts(self):
        truth = np.array([1, 1, 1, 0, 0])
        pred = np.array([1, 1, 0, 1, 0])
        assert f1_score(pred, truth) == pytest.approx(4 / 6)

    def test_all_negative_prediction(self):
        assert f1_score(np.zeros(4), np.array([0, 1, 0, 0])) == 0.0

    def test_both_empty(self):
        assert f1_score(np.zeros((2, 3)), np.zeros((2, 3))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            f1_score(np.zeros(3), np.zeros(4))

    def test_threshold_is_half_probability(self):
        np.testing.assert_array_equal(predict_mask(np.array([-0.1, 0.0, 0.1])), [0, 0, 1])
